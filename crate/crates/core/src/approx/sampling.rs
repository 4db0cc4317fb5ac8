//! Stratified sampling estimate of the Shapley value.
//!
//! For each player and coalition size the stratum is the set of same-size
//! coalitions containing the player. Small strata are summed exactly; large
//! ones get a pilot sample to estimate the spread of marginals, then a
//! sample sized from that spread. The sampled sum is scaled up by
//! `|stratum| / |sample|` before weighting.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    binomial_u64, marginal_weight, spread_without, AllocationResult, CharacteristicFunction, Coalition,
    CompensatedSum, Method, Players, WorthCache,
};

/// Largest game the sampler accepts.
pub const SAMPLING_CAP: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Pilot sample size per stratum.
    pub pilot_size: usize,
    pub z_score: f64,
    /// Margin of error, relative to the stratum's mean marginal.
    pub margin: f64,
    /// Strata with at least this many coalitions are sampled.
    pub stratum_trigger: u64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            pilot_size: 50,
            z_score: 1.96,
            margin: 0.2,
            stratum_trigger: 10_000,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pilot_size < 2 {
            return Err(Error::argument(format!("pilot size must be at least 2, got {}", self.pilot_size)));
        }
        if !(self.z_score > 0.0 && self.z_score.is_finite()) {
            return Err(Error::argument(format!("z-score must be positive, got {}", self.z_score)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::argument(format!("margin must be positive, got {}", self.margin)));
        }
        if self.stratum_trigger < 1 {
            return Err(Error::argument("stratum trigger must be at least 1"));
        }
        Ok(())
    }
}

/// `ceil((z * std / margin)^2)`, clamped to `[1, population]`.
pub fn optimal_sample_size(pilot_std: f64, cfg: &SamplingConfig, population: u64) -> u64 {
    let population = population.max(1);
    let raw = (cfg.z_score * pilot_std / cfg.margin).powi(2).ceil();
    if raw.is_nan() || raw >= population as f64 {
        population
    } else {
        (raw as u64).max(1)
    }
}

/// The `rank`-th `size`-subset of `{0..universe}` in colexicographic order.
fn unrank_combination(mut rank: u64, universe: usize, size: usize) -> u64 {
    let mut mask = 0u64;
    let mut hi = universe;
    for c in (1..=size).rev() {
        // largest x < hi with C(x, c) <= rank
        let mut x = c - 1;
        while x + 1 < hi && binomial_u64((x + 1) as u64, c as u64) <= rank {
            x += 1;
        }
        rank -= binomial_u64(x as u64, c as u64);
        mask |= 1u64 << x;
        hi = x;
    }
    mask
}

/// `count` distinct values from `[0, population)` (Floyd), ascending.
fn distinct_ranks<R: Rng>(rng: &mut R, count: u64, population: u64) -> Vec<u64> {
    let mut chosen = HashSet::with_capacity(count as usize);
    for j in population - count..population {
        let t = rng.random_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let mut ranks: Vec<u64> = chosen.into_iter().collect();
    ranks.sort_unstable();
    ranks
}

/// Next larger integer with the same popcount (Gosper).
fn next_same_popcount(v: u64) -> u64 {
    let c = v & v.wrapping_neg();
    let r = v + c;
    (((r ^ v) >> 2) / c) | r
}

struct PlayerEstimate {
    value: f64,
    sampled_strata: usize,
    sampled_coalitions: u64,
}

fn estimate_player<G: CharacteristicFunction>(
    w: &G,
    n: usize,
    player: usize,
    weights: &[f64],
    cfg: &SamplingConfig,
) -> Result<PlayerEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(player as u64);
    let marginal = |rest: u64| -> Result<f64> {
        let s = Coalition::from_bits(spread_without(rest, player));
        Ok(w.worth(s.with(player))? - w.worth(s)?)
    };

    let mut value = 0.0;
    let mut sampled_strata = 0;
    let mut sampled_coalitions = 0;
    for (others, weight) in weights.iter().enumerate() {
        // coalitions of size others + 1 containing the player
        let population = binomial_u64((n - 1) as u64, others as u64);
        let stratum_sum = if population < cfg.stratum_trigger {
            exact_stratum(n, others, &marginal)?
        } else {
            let pilot_count = (cfg.pilot_size as u64).min(population);
            let pilot = distinct_ranks(&mut rng, pilot_count, population)
                .into_iter()
                .map(|r| marginal(unrank_combination(r, n - 1, others)))
                .collect::<Result<Vec<f64>>>()?;
            let mean = pilot.iter().sum::<f64>() / pilot.len() as f64;
            let var = pilot.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (pilot.len() - 1).max(1) as f64;
            let std = var.sqrt();
            let relative_std = if std == 0.0 {
                0.0
            } else if mean == 0.0 {
                f64::INFINITY
            } else {
                std / mean.abs()
            };
            let size = optimal_sample_size(relative_std, cfg, population);
            if size >= population {
                exact_stratum(n, others, &marginal)?
            } else {
                sampled_strata += 1;
                sampled_coalitions += size;
                let mut acc = CompensatedSum::default();
                for r in distinct_ranks(&mut rng, size, population) {
                    acc.add(marginal(unrank_combination(r, n - 1, others))?);
                }
                acc.value() * (population as f64 / size as f64)
            }
        };
        value += weight * stratum_sum;
    }
    Ok(PlayerEstimate { value, sampled_strata, sampled_coalitions })
}

/// Sum of marginals over every `others`-subset of the other players, in
/// ascending mask order.
fn exact_stratum<F: Fn(u64) -> Result<f64>>(n: usize, others: usize, marginal: &F) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    if others == 0 {
        acc.add(marginal(0)?);
        return Ok(acc.value());
    }
    let end = 1u64 << (n - 1);
    let mut rest = (1u64 << others) - 1;
    while rest < end {
        acc.add(marginal(rest)?);
        rest = next_same_popcount(rest);
    }
    Ok(acc.value())
}

/// Stratified sampling Shapley estimate. Deterministic for a fixed seed.
pub fn shapley_sampling<G>(players: &Players, w: &G, cfg: &SamplingConfig) -> Result<AllocationResult>
where
    G: CharacteristicFunction,
{
    let started = Instant::now();
    cfg.validate()?;
    let n = players.count();
    if w.player_count() != n {
        return Err(Error::argument(format!(
            "game has {} players but {n} labels were given",
            w.player_count()
        )));
    }
    if n > SAMPLING_CAP {
        return Err(Error::capacity(format!(
            "sampling is capped at {SAMPLING_CAP} players, got {n}; use clustering"
        )));
    }
    let weights: Vec<f64> = (1..=n).map(|k| marginal_weight(k, n)).collect::<Result<_>>()?;
    let cache = WorthCache::new(w);

    let estimates = (0..n)
        .into_par_iter()
        .map(|i| estimate_player(&cache, n, i, &weights, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut result = AllocationResult::new(Method::Sampling, estimates.iter().map(|e| e.value).collect());
    result.seed = Some(cfg.seed);
    result
        .diagnostics
        .insert("evaluations".into(), cache.distinct_evaluations() as f64);
    result.diagnostics.insert(
        "sampled_strata".into(),
        estimates.iter().map(|e| e.sampled_strata).sum::<usize>() as f64,
    );
    result.diagnostics.insert(
        "sampled_coalitions".into(),
        estimates.iter().map(|e| e.sampled_coalitions).sum::<u64>() as f64,
    );
    result.wall_time = Some(started.elapsed());
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{shapley_exact, ExactOptions, TabulatedGame};

    #[test]
    fn sample_size_rule() {
        let cfg = SamplingConfig::default();
        assert_eq!(optimal_sample_size(0.0, &cfg, 1000), 1);
        assert_eq!(optimal_sample_size(1.0, &cfg, 1000), 97);
        assert_eq!(optimal_sample_size(10.0, &cfg, 5000), 5000);
        assert_eq!(optimal_sample_size(f64::INFINITY, &cfg, 77), 77);
    }

    #[test]
    fn default_trigger_first_fires_at_seventeen_players() {
        let trigger = SamplingConfig::default().stratum_trigger;
        let fires = |n: u64| (0..n).any(|k| binomial_u64(n - 1, k) >= trigger);
        let first = (1..=SAMPLING_CAP as u64).find(|&n| fires(n)).unwrap();
        assert!(!fires(first - 1));
        assert_eq!(first, 17);
    }

    #[test]
    fn unranking_enumerates_every_subset_once() {
        for (universe, size) in [(6, 0), (6, 3), (7, 1), (9, 4), (5, 5)] {
            let total = binomial_u64(universe as u64, size as u64);
            let mut seen = HashSet::new();
            for r in 0..total {
                let m = unrank_combination(r, universe, size);
                assert_eq!(m.count_ones() as usize, size);
                assert!(m >> universe == 0);
                assert!(seen.insert(m));
            }
        }
    }

    #[test]
    fn floyd_draws_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = distinct_ranks(&mut rng, 40, 50);
        assert_eq!(r.len(), 40);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        assert!(r.iter().all(|&x| x < 50));
        assert_eq!(distinct_ranks(&mut rng, 9, 9), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn exact_path_is_bit_identical() {
        let game = TabulatedGame::from_fn(9, |s| {
            let b = s.bits() as f64;
            (b * 0.37).sin().abs() * s.len() as f64
        })
        .unwrap();
        let game = TabulatedGame::new(9, {
            let mut t = game.worths().to_vec();
            t[0] = 0.0;
            t
        })
        .unwrap();
        let players = Players::anonymous(9).unwrap();
        let exact = shapley_exact(&players, &game, &ExactOptions::default()).unwrap();
        let cfg = SamplingConfig { stratum_trigger: u64::MAX, ..Default::default() };
        let sampled = shapley_sampling(&players, &game, &cfg).unwrap();
        for (a, b) in exact.values.iter().zip(&sampled.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn null_player_stays_zero_when_sampled() {
        let game = TabulatedGame::from_fn(12, |s| {
            let s = s.without(5);
            (s.len() as f64).powf(1.3) + (s.bits() % 7) as f64 * f64::from(!s.is_empty() as u8)
        })
        .unwrap();
        let players = Players::anonymous(12).unwrap();
        for seed in 0..5 {
            let cfg = SamplingConfig { stratum_trigger: 50, seed, ..Default::default() };
            let r = shapley_sampling(&players, &game, &cfg).unwrap();
            assert!(r.diagnostics["sampled_strata"] > 0.0);
            assert_eq!(r.values[5], 0.0);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let game = TabulatedGame::from_fn(12, |s| (s.bits() as f64).sqrt()).unwrap();
        let players = Players::anonymous(12).unwrap();
        let cfg = SamplingConfig { stratum_trigger: 100, seed: 9, ..Default::default() };
        let a = shapley_sampling(&players, &game, &cfg).unwrap();
        let b = shapley_sampling(&players, &game, &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn invalid_config_rejected() {
        let game = TabulatedGame::from_fn(3, |s| s.len() as f64).unwrap();
        let players = Players::anonymous(3).unwrap();
        for cfg in [
            SamplingConfig { pilot_size: 1, ..Default::default() },
            SamplingConfig { z_score: 0.0, ..Default::default() },
            SamplingConfig { margin: -1.0, ..Default::default() },
            SamplingConfig { stratum_trigger: 0, ..Default::default() },
        ] {
            assert!(matches!(shapley_sampling(&players, &game, &cfg), Err(Error::Argument(_))));
        }
    }
}
