//! Network revenue under flat and time-of-use energy tariffs.

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loads::{LoadTrace, DAYS_PER_YEAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Period {
    Peak,
    Shoulder,
    OffPeak,
}

/// Energy rates in cents per kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Rates {
    Flat { anytime: f64 },
    TimeOfUse { offpeak: f64, shoulder: f64, peak: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    /// Cents per day.
    pub fixed_charge: f64,
    pub rates: Rates,
}

impl TariffSchedule {
    /// Residential flat network tariff.
    pub fn flat() -> Self {
        TariffSchedule {
            fixed_charge: 40.097,
            rates: Rates::Flat { anytime: 11.163 },
        }
    }

    /// Residential time-of-use network tariff.
    pub fn time_of_use() -> Self {
        TariffSchedule {
            fixed_charge: 40.097,
            rates: Rates::TimeOfUse {
                offpeak: 2.805,
                shoulder: 7.086,
                peak: 27.335,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = match self.rates {
            Rates::Flat { anytime } => vec![anytime],
            Rates::TimeOfUse { offpeak, shoulder, peak } => vec![offpeak, shoulder, peak],
        };
        if rates
            .iter()
            .chain(std::iter::once(&self.fixed_charge))
            .any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return Err(Error::argument("tariff rates and fixed charge must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Cents per kWh in a period.
    pub fn rate(&self, period: Period) -> f64 {
        match self.rates {
            Rates::Flat { anytime } => anytime,
            Rates::TimeOfUse { offpeak, shoulder, peak } => match period {
                Period::Peak => peak,
                Period::Shoulder => shoulder,
                Period::OffPeak => offpeak,
            },
        }
    }
}

/// Period of the half-hour starting at `timestamp`. Windows are half-open.
///
/// Peak: weekdays November to March 14:00-20:00 and June to August
/// 17:00-21:00. Shoulder: other weekday time 07:00-22:00. Off-peak: the rest.
pub fn classify_period(timestamp: NaiveDateTime) -> Result<Period> {
    if timestamp.second() != 0 || timestamp.nanosecond() != 0 || !timestamp.minute().is_multiple_of(30) {
        return Err(Error::argument(format!("{timestamp} is not half-hour aligned")));
    }
    let weekday = !matches!(timestamp.weekday(), Weekday::Sat | Weekday::Sun);
    if !weekday {
        return Ok(Period::OffPeak);
    }
    let minute = timestamp.hour() * 60 + timestamp.minute();
    let within = |from: u32, to: u32| (from * 60..to * 60).contains(&minute);
    let peak = match timestamp.month() {
        11 | 12 | 1 | 2 | 3 => within(14, 20),
        6..=8 => within(17, 21),
        _ => false,
    };
    Ok(if peak {
        Period::Peak
    } else if within(7, 22) {
        Period::Shoulder
    } else {
        Period::OffPeak
    })
}

/// Energy charges only, in dollars. Exports are not credited.
pub fn energy_revenue(trace: &LoadTrace, schedule: &TariffSchedule) -> f64 {
    let calendar = trace.calendar();
    let cents: f64 = trace
        .values
        .iter()
        .enumerate()
        .map(|(t, &kwh)| {
            let period = classify_period(calendar.timestamp(t)).expect("calendar steps are aligned");
            schedule.rate(period) * kwh.max(0.0)
        })
        .sum();
    cents / 100.0
}

/// Yearly fixed charges in dollars.
pub fn fixed_revenue(schedule: &TariffSchedule) -> f64 {
    schedule.fixed_charge * DAYS_PER_YEAR as f64 / 100.0
}

/// Yearly network revenue from one customer, in dollars.
pub fn revenue(trace: &LoadTrace, schedule: &TariffSchedule) -> f64 {
    fixed_revenue(schedule) + energy_revenue(trace, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loads::INTERVALS_PER_YEAR;
    use chrono::NaiveDate;

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, min, 0).unwrap()
    }

    fn trace(kwh: f64) -> LoadTrace {
        LoadTrace::new(
            "x",
            NaiveDate::from_ymd_opt(2012, 7, 1).unwrap(),
            vec![kwh; INTERVALS_PER_YEAR],
            kwh < 0.0,
        )
        .unwrap()
    }

    #[test]
    fn reference_periods() {
        assert_eq!(classify_period(at(2013, 1, 16, 15, 0)).unwrap(), Period::Peak);
        assert_eq!(classify_period(at(2013, 4, 9, 9, 0)).unwrap(), Period::Shoulder);
        assert_eq!(classify_period(at(2013, 1, 19, 15, 0)).unwrap(), Period::OffPeak);
        assert!(classify_period(at(2013, 1, 16, 15, 10)).is_err());
    }

    #[test]
    fn zero_trace_pays_fixed_only() {
        let r = revenue(&trace(0.0), &TariffSchedule::flat());
        assert!((r - 146.354_05).abs() < 1e-9, "{r}");
    }

    #[test]
    fn flat_energy() {
        let kwh = 3000.0 / INTERVALS_PER_YEAR as f64;
        let r = revenue(&trace(kwh), &TariffSchedule::flat());
        assert!((r - 481.244_05).abs() < 1e-6, "{r}");
    }

    #[test]
    fn exports_are_not_credited() {
        let r = revenue(&trace(-0.3), &TariffSchedule::time_of_use());
        assert!((r - 146.354_05).abs() < 1e-9);
    }

    #[test]
    fn equal_rates_match_flat() {
        let flat = TariffSchedule::flat();
        let same = TariffSchedule {
            fixed_charge: 40.097,
            rates: Rates::TimeOfUse { offpeak: 11.163, shoulder: 11.163, peak: 11.163 },
        };
        let t = trace(0.37);
        assert!((revenue(&t, &flat) - revenue(&t, &same)).abs() < 1e-9);
    }

    #[test]
    fn negative_rates_rejected() {
        let bad = TariffSchedule { fixed_charge: -1.0, ..TariffSchedule::flat() };
        assert!(bad.validate().is_err());
        assert!(TariffSchedule::time_of_use().validate().is_ok());
    }
}
