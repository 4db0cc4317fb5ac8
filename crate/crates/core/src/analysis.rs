//! Comparison of Shapley allocations with energy- and peak-based ones.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approx::RunAllocation;
use crate::error::{Error, Result};
use crate::game::AllocationResult;
use crate::loads::{indicators, network_peak_time, IndicatorSet, LoadTrace};
use crate::tariffs::{energy_revenue, fixed_revenue, TariffSchedule};

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::argument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::argument(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Splits `total` in proportion to nonnegative `weights`.
pub fn allocate_proportional(total: f64, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::argument("weights must be finite and nonnegative"));
    }
    split_signed(total, weights)
}

/// Proportional split that tolerates negative weights with a positive sum.
fn split_signed(total: f64, weights: &[f64]) -> Result<Vec<f64>> {
    if !total.is_finite() {
        return Err(Error::argument("total must be finite"));
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::argument("weights must have a positive finite sum"));
    }
    Ok(weights.iter().map(|w| total * (w / sum)).collect())
}

/// Allocation methods compared in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CompareMethod {
    #[serde(rename = "EB-flat")]
    EnergyFlat,
    #[serde(rename = "EB-ToU")]
    EnergyTimeOfUse,
    #[serde(rename = "CP")]
    CoincidentPeak,
    #[serde(rename = "YP")]
    IndividualPeak,
    #[serde(rename = "MP")]
    MonthlyPeaks,
    #[serde(rename = "SV")]
    Shapley,
}

impl CompareMethod {
    pub const ALL: [CompareMethod; 6] = [
        CompareMethod::EnergyFlat,
        CompareMethod::EnergyTimeOfUse,
        CompareMethod::CoincidentPeak,
        CompareMethod::IndividualPeak,
        CompareMethod::MonthlyPeaks,
        CompareMethod::Shapley,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CompareMethod::EnergyFlat => "EB-flat",
            CompareMethod::EnergyTimeOfUse => "EB-ToU",
            CompareMethod::CoincidentPeak => "CP",
            CompareMethod::IndividualPeak => "YP",
            CompareMethod::MonthlyPeaks => "MP",
            CompareMethod::Shapley => "SV",
        }
    }
}

impl fmt::Display for CompareMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Indicator {
    Cpd,
    Ipd,
    Tpd,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::Cpd, Indicator::Ipd, Indicator::Tpd];

    pub fn of(self, set: &IndicatorSet) -> f64 {
        match self {
            Indicator::Cpd => set.cpd,
            Indicator::Ipd => set.ipd,
            Indicator::Tpd => set.tpd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevenuePool {
    Flat,
    TimeOfUse,
}

impl fmt::Display for RevenuePool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RevenuePool::Flat => "flat",
            RevenuePool::TimeOfUse => "time-of-use",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub flat: TariffSchedule,
    pub time_of_use: TariffSchedule,
    /// Count daily fixed charges in the revenue pools.
    pub include_fixed_charges: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            flat: TariffSchedule::flat(),
            time_of_use: TariffSchedule::time_of_use(),
            include_fixed_charges: true,
        }
    }
}

/// Allocations of one revenue pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolReport {
    pub pool: RevenuePool,
    /// Dollars.
    pub total: f64,
    pub allocations: BTreeMap<CompareMethod, Vec<f64>>,
    pub normalized: BTreeMap<CompareMethod, Vec<f64>>,
    /// RMSE of each allocation against the SV allocation, in dollars.
    pub rmse_vs_sv: BTreeMap<CompareMethod, f64>,
    pub rmse_vs_sv_normalized: BTreeMap<CompareMethod, f64>,
}

impl PoolReport {
    pub fn allocation(&self, method: CompareMethod) -> &[f64] {
        &self.allocations[&method]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Quartiles {
    /// Linear-interpolation quartiles. `None` for an empty sample.
    pub fn of(sample: &[f64]) -> Option<Self> {
        if sample.is_empty() {
            return None;
        }
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let h = q * (s.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(s.len() - 1);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        };
        Some(Quartiles {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            min: s[0],
            max: s[s.len() - 1],
        })
    }
}

/// Spread of per-run Shapley correlations across Monte Carlo runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs: usize,
    /// Runs where the correlation was undefined are left out.
    pub sv_correlation: BTreeMap<Indicator, Option<Quartiles>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMetadata {
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
    /// Effective configuration, echoed as given.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metadata: RunMetadata,
    pub customer_ids: Vec<String>,
    pub network_peak_interval: usize,
    pub indicators: Vec<IndicatorSet>,
    /// Solver outputs, the benchmark first.
    pub solvers: Vec<AllocationResult>,
    pub pools: Vec<PoolReport>,
    /// Pearson R of each method's allocation with each indicator; `None`
    /// where a vector has zero variance.
    pub correlations: BTreeMap<CompareMethod, BTreeMap<Indicator, Option<f64>>>,
    pub monte_carlo: Option<MonteCarloSummary>,
}

impl ComparisonReport {
    pub fn pool(&self, pool: RevenuePool) -> &PoolReport {
        self.pools.iter().find(|p| p.pool == pool).expect("both pools are always built")
    }

    pub fn correlation(&self, method: CompareMethod, indicator: Indicator) -> Option<f64> {
        self.correlations[&method][&indicator]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::data(format!("cannot serialize report: {e}")))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }

    /// Long-format `customer_id,method,value`. Solver rows carry the raw
    /// value; pool rows are labelled `<pool>/<method>`.
    pub fn write_allocations_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::Io { path: path.display().to_string(), source: e.into() };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["customer_id", "method", "value"]).map_err(io)?;
        for solver in &self.solvers {
            let label = solver.method.to_string();
            for (i, id) in self.customer_ids.iter().enumerate() {
                let value = solver.value(i).map_or(String::new(), |v| v.to_string());
                w.write_record([id.as_str(), label.as_str(), value.as_str()]).map_err(io)?;
            }
        }
        for pool in &self.pools {
            for (method, values) in &pool.allocations {
                let label = format!("{}/{}", pool.pool, method);
                for (id, v) in self.customer_ids.iter().zip(values) {
                    w.write_record([id.as_str(), label.as_str(), v.to_string().as_str()]).map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    values.iter().map(|v| v / sum).collect()
}

fn correlation(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    match pearson_r(x, y) {
        Ok(r) => Ok(Some(r)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Builds the method comparison around a Shapley benchmark.
///
/// `solvers[0]` is the benchmark and must value every customer. `runs`,
/// when given, are the Monte Carlo runs behind a clustering benchmark.
pub fn build_report(
    traces: &[LoadTrace],
    solvers: Vec<AllocationResult>,
    runs: Option<&[RunAllocation]>,
    config: &ReportConfig,
    metadata: RunMetadata,
) -> Result<ComparisonReport> {
    let n = traces.len();
    let sv = solvers.first().ok_or_else(|| Error::argument("no Shapley benchmark given"))?;
    if sv.values.len() != n {
        return Err(Error::argument(format!(
            "benchmark has {} values for {n} customers",
            sv.values.len()
        )));
    }
    if !sv.is_fully_covered() {
        return Err(Error::data(
            "Shapley benchmark leaves some customers without a value; increase runs or subset size",
        ));
    }
    config.flat.validate()?;
    config.time_of_use.validate()?;

    let peak_at = network_peak_time(traces)?;
    let indicator_sets = traces
        .iter()
        .map(|t| indicators(t, peak_at))
        .collect::<Result<Vec<_>>>()?;
    let indicator_values: BTreeMap<Indicator, Vec<f64>> = Indicator::ALL
        .iter()
        .map(|&ind| (ind, indicator_sets.iter().map(|s| ind.of(s)).collect()))
        .collect();

    let fixed = |s: &TariffSchedule| if config.include_fixed_charges { fixed_revenue(s) } else { 0.0 };
    let flat_bills: Vec<f64> = traces.iter().map(|t| fixed(&config.flat) + energy_revenue(t, &config.flat)).collect();
    let tou_bills: Vec<f64> = traces
        .iter()
        .map(|t| fixed(&config.time_of_use) + energy_revenue(t, &config.time_of_use))
        .collect();

    let demand_weights = |ind: Indicator| -> Vec<f64> { indicator_values[&ind].iter().map(|v| v.max(0.0)).collect() };
    let mut pools = Vec::with_capacity(2);
    for (pool, bills) in [(RevenuePool::Flat, &flat_bills), (RevenuePool::TimeOfUse, &tou_bills)] {
        let total: f64 = bills.iter().sum();
        let split = |weights: &[f64], what: &str| {
            split_signed(total, weights).map_err(|e| Error::data(format!("{what} allocation is undefined: {e}")))
        };
        let mut allocations = BTreeMap::new();
        allocations.insert(CompareMethod::EnergyFlat, split(&flat_bills, "EB-flat")?);
        allocations.insert(CompareMethod::EnergyTimeOfUse, split(&tou_bills, "EB-ToU")?);
        allocations.insert(CompareMethod::CoincidentPeak, split(&demand_weights(Indicator::Cpd), "CP")?);
        allocations.insert(CompareMethod::IndividualPeak, split(&demand_weights(Indicator::Ipd), "YP")?);
        allocations.insert(CompareMethod::MonthlyPeaks, split(&demand_weights(Indicator::Tpd), "MP")?);
        allocations.insert(CompareMethod::Shapley, split(&sv.values, "SV")?);

        let normalized: BTreeMap<_, _> = allocations.iter().map(|(&m, v)| (m, normalize(v))).collect();
        let reference = &allocations[&CompareMethod::Shapley];
        let reference_norm = &normalized[&CompareMethod::Shapley];
        let mut rmse_vs_sv = BTreeMap::new();
        let mut rmse_vs_sv_normalized = BTreeMap::new();
        for m in CompareMethod::ALL {
            rmse_vs_sv.insert(m, rmse(&allocations[&m], reference)?);
            rmse_vs_sv_normalized.insert(m, rmse(&normalized[&m], reference_norm)?);
        }
        pools.push(PoolReport { pool, total, allocations, normalized, rmse_vs_sv, rmse_vs_sv_normalized });
    }

    let mut correlations = BTreeMap::new();
    for m in CompareMethod::ALL {
        let values = &pools[0].allocations[&m];
        let mut row = BTreeMap::new();
        for ind in Indicator::ALL {
            row.insert(ind, correlation(values, &indicator_values[&ind])?);
        }
        correlations.insert(m, row);
    }

    let monte_carlo = match runs {
        None => None,
        Some(runs) => {
            let mut sv_correlation = BTreeMap::new();
            for ind in Indicator::ALL {
                let all = &indicator_values[&ind];
                let mut rs = Vec::with_capacity(runs.len());
                for run in runs {
                    if run.subset.iter().any(|&i| i >= n) {
                        return Err(Error::argument("Monte Carlo run refers to an unknown customer"));
                    }
                    let x: Vec<f64> = run.subset.iter().map(|&i| all[i]).collect();
                    if let Some(r) = correlation(&run.values, &x)? {
                        rs.push(r);
                    }
                }
                sv_correlation.insert(ind, Quartiles::of(&rs));
            }
            Some(MonteCarloSummary { runs: runs.len(), sv_correlation })
        }
    };

    Ok(ComparisonReport {
        metadata,
        customer_ids: traces.iter().map(|t| t.customer_id.clone()).collect(),
        network_peak_interval: peak_at,
        indicators: indicator_sets,
        solvers,
        pools,
        correlations,
        monte_carlo,
    })
}
