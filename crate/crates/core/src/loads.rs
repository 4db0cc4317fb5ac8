//! Half-hourly load traces: data model, CSV ingestion, synthetic
//! populations and peak-demand indicators.
//!
//! Traces cover exactly 365 days of 48 half-hour intervals. The day
//! sequence starts at the trace's start date and skips 29 February, so any
//! start date yields a fixed-length year. Values are energy per interval
//! (kWh); demand in kW is twice that.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::turvey::KW_PER_KWH_INTERVAL;

pub const INTERVALS_PER_DAY: usize = 48;
pub const DAYS_PER_YEAR: usize = 365;
pub const INTERVALS_PER_YEAR: usize = INTERVALS_PER_DAY * DAYS_PER_YEAR;

fn is_leap_day(date: NaiveDate) -> bool {
    date.month() == 2 && date.day() == 29
}

/// The 365 dates of a trace year starting at `start`, leap days skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Calendar {
    days: Vec<NaiveDate>,
}

impl Calendar {
    pub fn starting(start: NaiveDate) -> Self {
        let mut days = Vec::with_capacity(DAYS_PER_YEAR);
        let mut d = start;
        while days.len() < DAYS_PER_YEAR {
            if !is_leap_day(d) {
                days.push(d);
            }
            d = d.succ_opt().expect("date in range");
        }
        Calendar { days }
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn date(&self, interval: usize) -> NaiveDate {
        self.days[interval / INTERVALS_PER_DAY]
    }

    /// Local start time of an interval.
    pub fn timestamp(&self, interval: usize) -> NaiveDateTime {
        let slot = (interval % INTERVALS_PER_DAY) as u32;
        self.date(interval)
            .and_hms_opt(slot / 2, (slot % 2) * 30, 0)
            .expect("valid half-hour")
    }

    fn day_index(&self) -> HashMap<NaiveDate, usize> {
        self.days.iter().enumerate().map(|(i, &d)| (d, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadTrace {
    pub customer_id: String,
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
    pub has_pv: bool,
}

impl LoadTrace {
    pub fn new(customer_id: impl Into<String>, start_date: NaiveDate, values: Vec<f64>, has_pv: bool) -> Result<Self> {
        let customer_id = customer_id.into();
        if values.len() != INTERVALS_PER_YEAR {
            return Err(Error::data(format!(
                "trace {customer_id} has {} intervals, expected {INTERVALS_PER_YEAR}",
                values.len()
            )));
        }
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("trace {customer_id} has a non-finite value at interval {t}")));
        }
        if !has_pv {
            if let Some(t) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::data(format!(
                    "trace {customer_id} is negative at interval {t} but has no PV"
                )));
            }
        }
        Ok(LoadTrace { customer_id, start_date, values, has_pv })
    }

    pub fn calendar(&self) -> Calendar {
        Calendar::starting(self.start_date)
    }

    pub fn demand_kw(&self, interval: usize) -> f64 {
        KW_PER_KWH_INTERVAL * self.values[interval]
    }

    /// Mean energy per half-hour slot across the year.
    pub fn mean_daily_profile(&self) -> [f64; INTERVALS_PER_DAY] {
        let mut profile = [0.0; INTERVALS_PER_DAY];
        for day in self.values.chunks_exact(INTERVALS_PER_DAY) {
            for (p, v) in profile.iter_mut().zip(day) {
                *p += v;
            }
        }
        profile.iter_mut().for_each(|p| *p /= DAYS_PER_YEAR as f64);
        profile
    }

    pub fn total_energy(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Checks that every trace shares one start date; returns it.
pub fn check_aligned(traces: &[LoadTrace]) -> Result<NaiveDate> {
    let first = traces.first().ok_or_else(|| Error::argument("no traces"))?;
    for t in traces {
        if t.start_date != first.start_date {
            return Err(Error::data(format!(
                "trace {} starts {} but {} starts {}",
                t.customer_id, t.start_date, first.customer_id, first.start_date
            )));
        }
    }
    Ok(first.start_date)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    ZeroFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    pub missing: MissingPolicy,
    /// Traces are net of PV and may go negative.
    pub with_pv: bool,
}

enum Layout {
    Long,
    Wide,
}

fn slot_header(slot: usize) -> String {
    format!("hh_{slot:02}")
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>> {
    let io_err = |source| Error::Io { path: path.display().to_string(), source };
    let file = File::open(path).map_err(io_err)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(BufReader::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

type Readings = BTreeMap<(NaiveDate, usize), f64>;

/// Reads long (`customer_id,timestamp,kwh`) or wide
/// (`customer_id,date,hh_00..hh_47`) CSV; `.gz` files are decompressed.
/// Customers keep their order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Vec<LoadTrace>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open_reader(path)?);
    let csv_err = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));

    let headers = reader.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let layout = if names == ["customer_id", "timestamp", "kwh"] {
        Layout::Long
    } else if names.len() == 2 + INTERVALS_PER_DAY
        && names[0] == "customer_id"
        && names[1] == "date"
        && names[2..].iter().enumerate().all(|(i, n)| *n == slot_header(i))
    {
        Layout::Wide
    } else {
        return Err(Error::data(format!(
            "{}: unrecognised header; expected customer_id,timestamp,kwh or customer_id,date,hh_00..hh_47",
            path.display()
        )));
    };

    let mut order: Vec<String> = Vec::new();
    let mut readings: HashMap<String, Readings> = HashMap::new();
    let mut leap_rows = 0usize;

    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(0).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(Error::data(format!("row {line}: empty customer_id")));
        }
        let entry = readings.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Readings::new()
        });
        let parse_value = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| Error::data(format!("row {line}: non-numeric value {s:?}")))
        };
        match layout {
            Layout::Long => {
                let raw = record.get(1).unwrap_or_default();
                let ts = parse_timestamp(raw)
                    .ok_or_else(|| Error::data(format!("row {line}: bad timestamp {raw:?}")))?;
                if ts.second() != 0 || ts.minute() % 30 != 0 {
                    return Err(Error::data(format!("row {line}: timestamp {ts} is not half-hour aligned")));
                }
                if is_leap_day(ts.date()) {
                    leap_rows += 1;
                    continue;
                }
                let slot = (ts.hour() * 2 + ts.minute() / 30) as usize;
                if let Some(v) = parse_value(record.get(2).unwrap_or_default())? {
                    if entry.insert((ts.date(), slot), v).is_some() {
                        return Err(Error::data(format!("row {line}: duplicate reading for {id} at {ts}")));
                    }
                }
            }
            Layout::Wide => {
                let raw = record.get(1).unwrap_or_default();
                let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                    .map_err(|_| Error::data(format!("row {line}: bad date {raw:?}")))?;
                if is_leap_day(date) {
                    leap_rows += 1;
                    continue;
                }
                for slot in 0..INTERVALS_PER_DAY {
                    if let Some(v) = parse_value(record.get(2 + slot).unwrap_or_default())? {
                        if entry.insert((date, slot), v).is_some() {
                            return Err(Error::data(format!("row {line}: duplicate day {date} for {id}")));
                        }
                    }
                }
            }
        }
    }
    if leap_rows > 0 {
        log::warn!("{}: dropped {leap_rows} rows dated 29 February", path.display());
    }
    if order.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }

    let traces = order
        .into_iter()
        .map(|id| {
            let r = readings.remove(&id).expect("recorded customer");
            assemble(id, r, options)
        })
        .collect::<Result<Vec<_>>>()?;
    check_aligned(&traces)?;
    Ok(traces)
}

fn assemble(id: String, readings: Readings, options: &LoadOptions) -> Result<LoadTrace> {
    let start = readings
        .keys()
        .next()
        .map(|&(d, _)| d)
        .ok_or_else(|| Error::data(format!("customer {id} has no readings")))?;
    let calendar = Calendar::starting(start);
    let index = calendar.day_index();
    let mut values = vec![f64::NAN; INTERVALS_PER_YEAR];
    for (&(date, slot), &v) in &readings {
        let day = index.get(&date).ok_or_else(|| {
            Error::data(format!("customer {id} has a reading on {date}, beyond one year from {start}"))
        })?;
        values[day * INTERVALS_PER_DAY + slot] = v;
    }
    let mut filled = 0usize;
    for (t, v) in values.iter_mut().enumerate() {
        if v.is_nan() {
            match options.missing {
                MissingPolicy::Reject => {
                    return Err(Error::data(format!(
                        "customer {id} is missing the interval starting {}",
                        calendar.timestamp(t)
                    )));
                }
                MissingPolicy::ZeroFill => {
                    *v = 0.0;
                    filled += 1;
                }
            }
        }
    }
    if filled > 0 {
        log::warn!("customer {id}: zero-filled {filled} missing intervals");
    }
    LoadTrace::new(id, start, values, options.with_pv)
}

/// Writes wide-format CSV with six-decimal values; `.gz` paths are compressed.
pub fn write_csv(path: impl AsRef<Path>, traces: &[LoadTrace]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    let sink: Box<dyn Write> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzEncoder::new(BufWriter::new(file), flate2::Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    let mut writer = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));

    let mut header = vec!["customer_id".to_string(), "date".to_string()];
    header.extend((0..INTERVALS_PER_DAY).map(slot_header));
    writer.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for trace in traces {
        let calendar = trace.calendar();
        for (day, values) in calendar.days().iter().zip(trace.values.chunks_exact(INTERVALS_PER_DAY)) {
            row.clear();
            row.push(trace.customer_id.clone());
            row.push(day.format("%Y-%m-%d").to_string());
            row.extend(values.iter().map(|v| format!("{v:.6}")));
            writer.write_record(&row).map_err(csv_err)?;
        }
    }
    let mut sink = writer
        .into_inner()
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e.into_error() })?;
    sink.flush().map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    MorningPeak,
    EveningPeak,
    Flat,
    Daytime,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::MorningPeak,
        Archetype::EveningPeak,
        Archetype::Flat,
        Archetype::Daytime,
    ];

    /// Typical-day energy per half-hour (kWh), before seasonal scaling.
    pub fn daily_shape(self) -> [f64; INTERVALS_PER_DAY] {
        let bump = |slot: usize, centre: f64, width: f64, height: f64| {
            let z = (slot as f64 - centre) / width;
            height * (-0.5 * z * z).exp()
        };
        let mut shape = [0.0; INTERVALS_PER_DAY];
        for (slot, v) in shape.iter_mut().enumerate() {
            *v = match self {
                Archetype::MorningPeak => 0.12 + bump(slot, 15.0, 2.0, 0.9) + bump(slot, 38.0, 3.0, 0.25),
                Archetype::EveningPeak => 0.12 + bump(slot, 37.0, 2.5, 1.0) + bump(slot, 15.0, 2.0, 0.25),
                Archetype::Flat => 0.42,
                Archetype::Daytime => 0.10 + bump(slot, 26.0, 5.0, 0.55),
            };
        }
        shape
    }

    /// Half-hour slot of the typical-day maximum.
    pub fn peak_slot(self) -> usize {
        crate::peaks::argmax(&self.daily_shape()).map_or(0, |(_, i)| i)
    }
}

/// Recipe for a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    /// Archetype and customer count, in output order.
    pub groups: Vec<(Archetype, usize)>,
    /// Standard deviation of multiplicative per-interval noise.
    pub noise: f64,
    /// Customer size factors are drawn uniformly from `1 ± scale_spread`.
    pub scale_spread: f64,
    /// Relative amplitude of the winter demand swing.
    pub seasonality: f64,
    /// Peak PV output per half-hour (kWh) subtracted around midday; 0 disables PV.
    pub pv_amplitude: f64,
    pub start_date: NaiveDate,
}

impl PopulationSpec {
    pub fn new(groups: Vec<(Archetype, usize)>) -> Self {
        PopulationSpec {
            groups,
            noise: 0.15,
            scale_spread: 0.3,
            seasonality: 0.3,
            pv_amplitude: 0.0,
            start_date: NaiveDate::from_ymd_opt(2012, 7, 1).expect("valid date"),
        }
    }

    /// Residential mix: half evening-peak, a quarter morning-peak, the rest
    /// high-energy flat.
    pub fn residential(customers: usize) -> Self {
        let evening = customers / 2;
        let morning = (customers - evening) / 2;
        PopulationSpec::new(vec![
            (Archetype::EveningPeak, evening),
            (Archetype::MorningPeak, morning),
            (Archetype::Flat, customers - evening - morning),
        ])
    }

    /// Equal split between morning-peak and evening-peak customers.
    pub fn two_archetypes(customers: usize) -> Self {
        let morning = customers / 2;
        PopulationSpec::new(vec![
            (Archetype::MorningPeak, morning),
            (Archetype::EveningPeak, customers - morning),
        ])
    }

    pub fn customer_count(&self) -> usize {
        self.groups.iter().map(|(_, c)| c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub traces: Vec<LoadTrace>,
    pub labels: Vec<Archetype>,
}

/// Winter (June to August) demand lift, peaking mid-July.
fn seasonal_factor(date: NaiveDate, amplitude: f64) -> f64 {
    let phase = (date.ordinal0() as f64 - 196.0) / 365.0 * std::f64::consts::TAU;
    1.0 + amplitude * phase.cos()
}

/// Clear-sky PV output per half-hour as a fraction of the amplitude.
fn pv_shape(date: NaiveDate, slot: usize) -> f64 {
    let hour = slot as f64 / 2.0 + 0.25;
    if !(6.0..=18.0).contains(&hour) {
        return 0.0;
    }
    let daylight = ((hour - 6.0) / 12.0 * std::f64::consts::PI).sin();
    // strongest around the summer solstice in December
    let phase = (date.ordinal0() as f64 - 355.0) / 365.0 * std::f64::consts::TAU;
    daylight * (0.75 + 0.25 * phase.cos())
}

/// Deterministic synthetic traces. Each customer draws from its own
/// ChaCha stream keyed by (seed, customer index).
pub fn generate_synthetic(spec: &PopulationSpec, seed: u64) -> Result<SyntheticPopulation> {
    if spec.customer_count() == 0 {
        return Err(Error::argument("population spec has no customers"));
    }
    if !(spec.noise >= 0.0 && (0.0..1.0).contains(&spec.scale_spread) && spec.pv_amplitude >= 0.0) {
        return Err(Error::argument("noise and pv_amplitude must be nonnegative, scale_spread in [0, 1)"));
    }
    let calendar = Calendar::starting(spec.start_date);
    let has_pv = spec.pv_amplitude > 0.0;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::argument(e.to_string()))?;

    let mut traces = Vec::with_capacity(spec.customer_count());
    let mut labels = Vec::with_capacity(spec.customer_count());
    let archetypes = spec
        .groups
        .iter()
        .flat_map(|&(a, count)| std::iter::repeat_n(a, count));
    for (index, archetype) in archetypes.enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let size = 1.0 + spec.scale_spread * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0);
        let shape = archetype.daily_shape();
        let mut values = Vec::with_capacity(INTERVALS_PER_YEAR);
        for &date in calendar.days() {
            let season = seasonal_factor(date, spec.seasonality);
            for (slot, &base) in shape.iter().enumerate() {
                let jitter = if spec.noise > 0.0 { 1.0 + noise.sample(&mut rng) } else { 1.0 };
                let mut v = (base * size * season * jitter).max(0.0);
                if has_pv {
                    v -= spec.pv_amplitude * pv_shape(date, slot);
                }
                values.push(v);
            }
        }
        traces.push(LoadTrace::new(format!("C{index:03}"), spec.start_date, values, has_pv)?);
        labels.push(archetype);
    }
    Ok(SyntheticPopulation { traces, labels })
}

/// Coincident, individual and total peak demand of one customer, in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSet {
    pub cpd: f64,
    pub ipd: f64,
    pub tpd: f64,
}

pub fn indicators(trace: &LoadTrace, network_peak_time: usize) -> Result<IndicatorSet> {
    if network_peak_time >= trace.values.len() {
        return Err(Error::argument(format!(
            "network peak interval {network_peak_time} outside a {}-interval trace",
            trace.values.len()
        )));
    }
    let calendar = trace.calendar();
    let mut monthly = [f64::NEG_INFINITY; 12];
    for (day, values) in calendar.days().iter().zip(trace.values.chunks_exact(INTERVALS_PER_DAY)) {
        let m = day.month0() as usize;
        for &v in values {
            monthly[m] = monthly[m].max(v);
        }
    }
    let ipd = trace.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tpd: f64 = monthly.iter().filter(|m| m.is_finite()).sum();
    Ok(IndicatorSet {
        cpd: trace.demand_kw(network_peak_time),
        ipd: KW_PER_KWH_INTERVAL * ipd,
        tpd: KW_PER_KWH_INTERVAL * tpd,
    })
}

/// Interval of the aggregate yearly peak; ties go to the earliest interval.
pub fn network_peak_time(traces: &[LoadTrace]) -> Result<usize> {
    let first = traces.first().ok_or_else(|| Error::argument("no traces"))?;
    let mut total = first.values.clone();
    for t in &traces[1..] {
        if t.values.len() != total.len() {
            return Err(Error::data(format!("trace {} is misaligned", t.customer_id)));
        }
        for (a, v) in total.iter_mut().zip(&t.values) {
            *a += v;
        }
    }
    crate::peaks::argmax(&total)
        .map(|(_, i)| i)
        .ok_or_else(|| Error::data("empty traces"))
}
