//! Shapley values over load-profile clusters, apportioned to members.
//!
//! Each Monte Carlo run samples a subset of customers, plays the exact game
//! whose players are the clusters, and splits each cluster's value among
//! its sampled members by their share of demand at coalition peak times.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::kmeans::ClusterModel;
use crate::error::{Error, Result};
use crate::game::{shapley_exact, AllocationResult, Coalition, ExactOptions, Method, Players, TabulatedGame};
use crate::loads::{check_aligned, LoadTrace};
use crate::turvey::{GameConfig, TurveyGame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub runs: usize,
    /// Customers per run; `None` uses the whole population.
    pub subset_size: Option<usize>,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig { runs: 100, subset_size: None, seed: 0 }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self, population: usize) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::argument("at least one Monte Carlo run is required"));
        }
        match self.subset_size {
            Some(0) => Err(Error::argument("subset size must be positive")),
            Some(s) if s > population => Err(Error::argument(format!(
                "subset size {s} exceeds the population of {population}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Members' average share of cluster demand at the given peak intervals.
///
/// A peak time where the members' clipped demand totals zero contributes
/// equal shares. The result sums to one.
pub fn apportionment_vector(members: &[&[f64]], peak_times: &[usize]) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::argument("apportionment needs at least one member"));
    }
    if peak_times.is_empty() {
        return Err(Error::argument("apportionment needs at least one peak time"));
    }
    let len = members[0].len();
    if members.iter().any(|m| m.len() != len) {
        return Err(Error::data("member traces are misaligned"));
    }
    if let Some(&t) = peak_times.iter().find(|&&t| t >= len) {
        return Err(Error::argument(format!("peak time {t} outside a {len}-interval trace")));
    }

    let mut times = peak_times.to_vec();
    times.sort_unstable();
    let equal = 1.0 / members.len() as f64;
    let mut shares = vec![0.0; members.len()];
    for run in times.chunk_by(|a, b| a == b) {
        let t = run[0];
        let weight = run.len() as f64;
        let total: f64 = members.iter().map(|m| m[t].max(0.0)).sum();
        for (s, m) in shares.iter_mut().zip(members) {
            let share = if total > 0.0 { m[t].max(0.0) / total } else { equal };
            *s += weight * share;
        }
    }
    let sum: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|s| *s /= sum);
    Ok(shares)
}

/// One Monte Carlo run: the sampled customers and their apportioned values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAllocation {
    /// Sampled customer indices, ascending.
    pub subset: Vec<usize>,
    /// Apportioned value per sampled customer, aligned with `subset`.
    pub values: Vec<f64>,
    /// Worth of the run's grand coalition.
    pub grand_worth: f64,
}

fn play_run(
    traces: &[LoadTrace],
    model: &ClusterModel,
    cfg: &GameConfig,
    subset: &[usize],
) -> Result<RunAllocation> {
    let k = model.k;
    let len = traces[0].values.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in subset {
        members[model.assignment[i]].push(i);
    }
    let series: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            let mut s = vec![0.0; len];
            for &i in m {
                for (a, v) in s.iter_mut().zip(&traces[i].values) {
                    *a += v;
                }
            }
            s
        })
        .collect();

    let game = TurveyGame::new(series.iter().map(Vec::as_slice).collect(), *cfg)?;
    let table = game.series_set().peaks()?;
    let worths = game.worths_from_peaks(&table);
    let grand_worth = worths[(1usize << k) - 1];
    let cluster_game = TabulatedGame::new(k, worths)?;
    let players = Players::anonymous(k)?;
    let sv = shapley_exact(&players, &cluster_game, &ExactOptions::default())?;

    let mut values = Vec::with_capacity(subset.len());
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        let times: Vec<usize> = (0u64..1 << k)
            .filter(|&mask| Coalition::from_bits(mask).contains(c))
            .map(|mask| table.times[mask as usize] as usize)
            .collect();
        let traces_of: Vec<&[f64]> = m.iter().map(|&i| traces[i].values.as_slice()).collect();
        let shares = apportionment_vector(&traces_of, &times)?;
        values.extend(m.iter().zip(shares).map(|(&i, s)| (i, sv.values[c] * s)));
    }
    values.sort_unstable_by_key(|&(i, _)| i);
    Ok(RunAllocation {
        subset: values.iter().map(|&(i, _)| i).collect(),
        values: values.iter().map(|&(_, v)| v).collect(),
        grand_worth,
    })
}

fn check_inputs(traces: &[LoadTrace], model: &ClusterModel, cfg: &GameConfig, mc: &MonteCarloConfig) -> Result<()> {
    let n = traces.len();
    check_aligned(traces)?;
    cfg.validate()?;
    mc.validate(n)?;
    if model.customer_count() != n
        || model.customer_ids.iter().zip(traces).any(|(id, t)| *id != t.customer_id)
    {
        return Err(Error::argument("cluster model was built for a different set of customers"));
    }
    if model.k == 0 || model.k > super::kmeans::MAX_CLUSTERS || model.assignment.iter().any(|&a| a >= model.k) {
        return Err(Error::argument(format!("cluster model is invalid for k = {}", model.k)));
    }
    Ok(())
}

/// Plays every Monte Carlo run. Full-population runs are all the same game,
/// so it is played once and repeated.
pub fn clustering_runs(
    traces: &[LoadTrace],
    model: &ClusterModel,
    cfg: &GameConfig,
    mc: &MonteCarloConfig,
) -> Result<Vec<RunAllocation>> {
    check_inputs(traces, model, cfg, mc)?;
    let n = traces.len();
    let subset_size = mc.subset_size.unwrap_or(n);
    if subset_size == n {
        let all: Vec<usize> = (0..n).collect();
        let run = play_run(traces, model, cfg, &all)?;
        return Ok(vec![run; mc.runs]);
    }
    (0..mc.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
            rng.set_stream(run as u64);
            let mut subset = rand::seq::index::sample(&mut rng, n, subset_size).into_vec();
            subset.sort_unstable();
            play_run(traces, model, cfg, &subset)
        })
        .collect()
}

/// Per-customer mean over the runs that sampled it.
pub fn fold_runs(customers: usize, runs: &[RunAllocation]) -> AllocationResult {
    let mut sums = vec![0.0; customers];
    let mut coverage = vec![0u32; customers];
    let mut worst_gap = 0.0f64;
    for run in runs {
        for (&i, &v) in run.subset.iter().zip(&run.values) {
            sums[i] += v;
            coverage[i] += 1;
        }
        let total: f64 = run.values.iter().sum();
        worst_gap = worst_gap.max((total - run.grand_worth).abs());
    }
    let values = sums
        .iter()
        .zip(&coverage)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mut result = AllocationResult::new(Method::Clustering, values);
    result.coverage = coverage;
    result.diagnostics.insert("runs".into(), runs.len() as f64);
    result.diagnostics.insert("max_run_conservation_gap".into(), worst_gap);
    result
}

/// Cluster-based Shapley estimate. Customers never sampled get coverage 0.
pub fn shapley_clustering(
    traces: &[LoadTrace],
    model: &ClusterModel,
    cfg: &GameConfig,
    mc: &MonteCarloConfig,
) -> Result<AllocationResult> {
    let started = Instant::now();
    let runs = clustering_runs(traces, model, cfg, mc)?;
    let mut result = fold_runs(traces.len(), &runs);
    result.seed = Some(mc.seed);
    result.diagnostics.insert("clusters".into(), model.k as f64);
    result
        .diagnostics
        .insert("subset_size".into(), mc.subset_size.unwrap_or(traces.len()) as f64);
    result.wall_time = Some(started.elapsed());
    Ok(result)
}
