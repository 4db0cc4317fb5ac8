//! Coincident peaks of every coalition of a set of aligned series.
//!
//! [`SeriesSet`] fixes one summation order for aggregates, so a table entry
//! from [`SeriesSet::peaks`] and a fresh [`SeriesSet::peak`] agree bit for
//! bit.
//!
//! The table walks the subset lattice depth first, adding players in
//! descending rank. A node covering coalition `S` whose smallest rank is `m`
//! owns the contiguous rank-mask range `[S, S + 2^m)`. Before descending, it
//! drops every step that cannot be the peak of any coalition in its range:
//! with `t*` the node's own peak step, step `t` is dropped when
//!
//! ```text
//! agg_S(t) - agg_S(t*) + sum_{r < m} max(d_r(t) - d_r(t*), 0) < -slack
//! ```
//!
//! which bounds `agg_{S+T}(t) - agg_{S+T}(t*)` from above for every
//! `T ⊆ {0..m}`. Deep nodes, which dominate the count, end up scanning a
//! handful of candidate steps instead of the whole year.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::Coalition;

/// Below this subtree height nodes are processed on the calling thread.
const PARALLEL_MIN_HEIGHT: usize = 12;

/// Hard ceiling on table size (2^26 entries, ~800 MB with peak times).
pub const MAX_TABLE_PLAYERS: usize = 26;

/// Peak value and earliest peak time for every coalition, indexed by mask.
/// The empty coalition holds `-inf` and `u32::MAX`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakTable {
    pub peaks: Vec<f64>,
    pub times: Vec<u32>,
}

fn check_aligned(series: &[&[f64]]) -> Result<usize> {
    let len = series
        .first()
        .map(|s| s.len())
        .ok_or_else(|| Error::argument("no series given"))?;
    if len == 0 {
        return Err(Error::data("series are empty"));
    }
    if len > u32::MAX as usize {
        return Err(Error::data("series too long"));
    }
    if let Some((i, s)) = series.iter().enumerate().find(|(_, s)| s.len() != len) {
        return Err(Error::data(format!(
            "series {i} has {} steps, expected {len}",
            s.len()
        )));
    }
    Ok(len)
}

/// Maximum value and its earliest index.
pub fn argmax(values: &[f64]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (t, &v) in values.iter().enumerate() {
        match best {
            Some((b, _)) if v <= b => {}
            _ => best = Some((v, t)),
        }
    }
    best
}

/// Aligned series with a fixed summation order.
///
/// Players are ranked once from the data: rank 0 goes to the series that
/// varies least across the grand aggregate's busiest steps. Aggregates sum
/// members from the highest rank down, which is also the order in which the
/// lattice walk adds them, so low-variance players end up deep in the walk
/// where the pruning bound is tight.
#[derive(Debug, Clone)]
pub struct SeriesSet<'a> {
    series: Vec<&'a [f64]>,
    /// `by_rank[k]` is the player holding rank `k`
    by_rank: Vec<usize>,
    len: usize,
}

/// Share of steps, by grand-aggregate value, used to rank players.
const RANKING_QUANTILE: f64 = 0.01;

impl<'a> SeriesSet<'a> {
    pub fn new(series: Vec<&'a [f64]>) -> Result<Self> {
        let len = check_aligned(&series)?;
        if series.len() > crate::game::MAX_PLAYERS {
            return Err(Error::capacity(format!(
                "at most {} series, got {}",
                crate::game::MAX_PLAYERS,
                series.len()
            )));
        }
        if let Some(i) = series.iter().position(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(Error::data(format!("series {i} contains non-finite values")));
        }

        let mut grand = vec![0.0; len];
        for s in &series {
            for (g, x) in grand.iter_mut().zip(s.iter()) {
                *g += x;
            }
        }
        let mut busiest: Vec<usize> = (0..len).collect();
        busiest.sort_by(|&a, &b| grand[b].total_cmp(&grand[a]).then(a.cmp(&b)));
        busiest.truncate(((len as f64 * RANKING_QUANTILE).ceil() as usize).max(1));
        let spread: Vec<f64> = series
            .iter()
            .map(|s| {
                let m = busiest.iter().map(|&t| s[t]).sum::<f64>() / busiest.len() as f64;
                busiest.iter().map(|&t| (s[t] - m).powi(2)).sum::<f64>()
            })
            .collect();
        let mut by_rank: Vec<usize> = (0..series.len()).collect();
        by_rank.sort_by(|&a, &b| spread[a].total_cmp(&spread[b]).then(a.cmp(&b)));
        Ok(SeriesSet { series, by_rank, len })
    }

    pub fn player_count(&self) -> usize {
        self.series.len()
    }

    pub fn steps(&self) -> usize {
        self.len
    }

    pub fn series(&self) -> &[&'a [f64]] {
        &self.series
    }

    /// Members of `coalition` in summation order.
    fn summation_order(&self, coalition: Coalition) -> impl Iterator<Item = usize> + '_ {
        self.by_rank.iter().rev().copied().filter(move |&p| coalition.contains(p))
    }

    /// Aggregate series of `coalition`; `None` when empty.
    pub fn aggregate(&self, coalition: Coalition) -> Result<Option<Vec<f64>>> {
        if coalition.bits() >> self.series.len() != 0 {
            return Err(Error::argument(format!(
                "coalition {coalition:?} outside a {}-series set",
                self.series.len()
            )));
        }
        let mut members = self.summation_order(coalition);
        let Some(top) = members.next() else {
            return Ok(None);
        };
        let mut agg = self.series[top].to_vec();
        for m in members {
            for (a, &x) in agg.iter_mut().zip(self.series[m]) {
                *a += x;
            }
        }
        Ok(Some(agg))
    }

    /// Peak and earliest peak step of one coalition.
    pub fn peak(&self, coalition: Coalition) -> Result<Option<(f64, usize)>> {
        Ok(self.aggregate(coalition)?.and_then(|agg| argmax(&agg)))
    }

    /// Peak of every coalition, indexed by player mask.
    pub fn peaks(&self) -> Result<PeakTable> {
        let n = self.series.len();
        if n > MAX_TABLE_PLAYERS {
            return Err(Error::capacity(format!(
                "peak table is capped at {MAX_TABLE_PLAYERS} series, got {n}"
            )));
        }
        let ranked: Vec<&[f64]> = self.by_rank.iter().map(|&p| self.series[p]).collect();
        let by_rank_table = ranked_peaks(&ranked, self.len);

        // rank-space mask -> player-space mask, one byte at a time
        let bytes = n.div_ceil(8);
        let lookup: Vec<[u64; 256]> = (0..bytes)
            .map(|b| {
                let mut table = [0u64; 256];
                for (v, slot) in table.iter_mut().enumerate() {
                    for bit in 0..8 {
                        let rank = b * 8 + bit;
                        if v >> bit & 1 == 1 && rank < n {
                            *slot |= 1u64 << self.by_rank[rank];
                        }
                    }
                }
                table
            })
            .collect();
        let size = 1usize << n;
        let mut peaks = vec![f64::NEG_INFINITY; size];
        let mut times = vec![u32::MAX; size];
        for rank_mask in 0..size {
            let mut player_mask = 0u64;
            for (b, table) in lookup.iter().enumerate() {
                player_mask |= table[(rank_mask >> (8 * b)) & 0xff];
            }
            peaks[player_mask as usize] = by_rank_table.peaks[rank_mask];
            times[player_mask as usize] = by_rank_table.times[rank_mask];
        }
        Ok(PeakTable { peaks, times })
    }
}

/// Peak of one coalition's aggregate, summed in [`SeriesSet`] order.
pub fn coalition_peak(series: &[&[f64]], coalition: Coalition) -> Result<Option<(f64, usize)>> {
    SeriesSet::new(series.to_vec())?.peak(coalition)
}

/// Peak of every coalition of `series`.
pub fn coalition_peaks(series: &[&[f64]]) -> Result<PeakTable> {
    SeriesSet::new(series.to_vec())?.peaks()
}

struct Lattice<'a> {
    series: &'a [&'a [f64]],
    /// time-major copy: `by_time[t * n + r]`
    by_time: Vec<f64>,
    n: usize,
    slack: f64,
}

/// Per-depth buffers reused across sibling subtrees.
#[derive(Default)]
struct Scratch {
    kept_times: Vec<u32>,
    kept_agg: Vec<f64>,
    child_agg: Vec<f64>,
}

fn scratch_stack(depth: usize) -> Vec<Scratch> {
    (0..depth).map(|_| Scratch::default()).collect()
}

/// Table over series already in summation order (index = rank).
fn ranked_peaks(series: &[&[f64]], len: usize) -> PeakTable {
    let n = series.len();
    let mut by_time = vec![0.0; len * n];
    for (r, s) in series.iter().enumerate() {
        for (t, &x) in s.iter().enumerate() {
            by_time[t * n + r] = x;
        }
    }
    // Far above the float error of any aggregate; keeps rounding from
    // dropping a step that ties the true peak.
    let scale: f64 = series
        .iter()
        .map(|s| s.iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .sum();
    let lattice = Lattice {
        series,
        by_time,
        n,
        slack: 1e-9 * scale.max(f64::MIN_POSITIVE),
    };

    let size = 1usize << n;
    let mut peaks = vec![f64::NEG_INFINITY; size];
    let mut times = vec![u32::MAX; size];
    let all: Vec<u32> = (0..len as u32).collect();

    let (_, peak_rest) = peaks.split_at_mut(1);
    let (_, time_rest) = times.split_at_mut(1);
    let jobs = split_children(peak_rest, time_rest, n);
    jobs.into_par_iter().for_each(|(j, p, t)| {
        let mut scratch = scratch_stack(j + 1);
        lattice.visit(j, &all, lattice.series[j], p, t, &mut scratch);
    });
    PeakTable { peaks, times }
}

/// Splits the output range of a node's children (everything after the node's
/// own slot) into per-child ranges: child `j` owns `2^j` consecutive slots.
fn split_children<'s>(
    mut peaks: &'s mut [f64],
    mut times: &'s mut [u32],
    children: usize,
) -> Vec<(usize, &'s mut [f64], &'s mut [u32])> {
    let mut out = Vec::with_capacity(children);
    for j in 0..children {
        let (p, p_rest) = peaks.split_at_mut(1 << j);
        let (t, t_rest) = times.split_at_mut(1 << j);
        out.push((j, p, t));
        peaks = p_rest;
        times = t_rest;
    }
    out
}

impl Lattice<'_> {
    /// Fills the `2^min_member` entries of one coalition's subtree. `active`
    /// lists candidate steps in ascending order and `agg` holds the
    /// coalition's aggregate there.
    /// `scratch` has at least `min_member + 1` levels.
    #[allow(clippy::too_many_arguments)]
    fn visit(
        &self,
        min_member: usize,
        active: &[u32],
        agg: &[f64],
        peaks: &mut [f64],
        times: &mut [u32],
        scratch: &mut [Scratch],
    ) {
        let (best, best_pos) = argmax(agg).expect("active set never empty");
        peaks[0] = best;
        times[0] = active[best_pos];
        if min_member == 0 {
            return;
        }

        let n = self.n;
        let remaining = min_member;
        let (level, deeper) = scratch.split_first_mut().expect("scratch depth");
        let Scratch { kept_times, kept_agg, child_agg } = level;
        kept_times.clear();
        kept_agg.clear();
        let ref_row = &self.by_time[active[best_pos] as usize * n..][..remaining];
        let threshold = best - self.slack;
        for (&t, &c) in active.iter().zip(agg) {
            let keep = c >= threshold || {
                let row = &self.by_time[t as usize * n..][..remaining];
                let lift: f64 = row.iter().zip(ref_row).map(|(x, r)| (x - r).max(0.0)).sum();
                c + lift >= threshold
            };
            if keep {
                kept_times.push(t);
                kept_agg.push(c);
            }
        }

        let (_, peak_rest) = peaks.split_at_mut(1);
        let (_, time_rest) = times.split_at_mut(1);
        let jobs = split_children(peak_rest, time_rest, remaining);
        if remaining >= PARALLEL_MIN_HEIGHT {
            let kept_times = &*kept_times;
            let kept_agg = &*kept_agg;
            jobs.into_par_iter().for_each(|(j, p, t)| {
                let s = self.series[j];
                let child: Vec<f64> = kept_times
                    .iter()
                    .zip(kept_agg)
                    .map(|(&time, &c)| c + s[time as usize])
                    .collect();
                let mut scratch = scratch_stack(j + 1);
                self.visit(j, kept_times, &child, p, t, &mut scratch);
            });
        } else {
            for (j, p, t) in jobs {
                let s = self.series[j];
                child_agg.clear();
                child_agg.extend(
                    kept_times
                        .iter()
                        .zip(kept_agg.iter())
                        .map(|(&time, &c)| c + s[time as usize]),
                );
                self.visit(j, kept_times, child_agg, p, t, deeper);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..len).map(|_| rng.random_range(-0.5..2.0)).collect())
            .collect()
    }

    #[test]
    fn table_matches_fresh_evaluation_bitwise() {
        for seed in 0..4 {
            let owned = random_series(9, 200, seed);
            let series: Vec<&[f64]> = owned.iter().map(|s| s.as_slice()).collect();
            let table = coalition_peaks(&series).unwrap();
            assert_eq!(table.peaks[0], f64::NEG_INFINITY);
            for mask in 1..1u64 << 9 {
                let (p, t) = coalition_peak(&series, Coalition::from_bits(mask)).unwrap().unwrap();
                assert_eq!(table.peaks[mask as usize].to_bits(), p.to_bits(), "mask {mask}");
                assert_eq!(table.times[mask as usize] as usize, t, "mask {mask}");
            }
        }
    }

    #[test]
    fn ties_resolve_to_earliest_step() {
        let a = [1.0, 3.0, 0.0, 3.0];
        let b = [0.0, 1.0, 4.0, 1.0];
        let series: Vec<&[f64]> = vec![&a, &b];
        let table = coalition_peaks(&series).unwrap();
        assert_eq!(table.times[1], 1);
        assert_eq!(table.peaks[3], 4.0);
        assert_eq!(table.times[3], 1);
    }

    #[test]
    fn misaligned_series_rejected() {
        let a = [1.0, 2.0];
        let b = [1.0];
        let series: Vec<&[f64]> = vec![&a, &b];
        assert!(matches!(coalition_peaks(&series), Err(Error::Data(_))));
        assert!(coalition_peaks(&[]).is_err());
    }

    #[test]
    fn empty_coalition_has_no_peak() {
        let a = [1.0, 2.0];
        let series: Vec<&[f64]> = vec![&a];
        assert!(coalition_peak(&series, Coalition::EMPTY).unwrap().is_none());
    }
}
