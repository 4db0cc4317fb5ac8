//! Transferable-utility games and the exact Shapley value.
//!
//! Coalitions are 64-bit masks over player indices. Exact computation walks
//! every coalition in ascending mask order and accumulates each player's
//! marginal contributions stratum by stratum (by coalition size), so the
//! result is reproducible bit for bit regardless of worker count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest player count a [`Coalition`] mask can address.
pub const MAX_PLAYERS: usize = 63;

/// Default player cap for [`shapley_exact`].
pub const DEFAULT_EXACT_CAP: usize = 25;

/// Player cap for [`shapley_permutation_oracle`] (n! orders).
pub const ORACLE_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Players {
    labels: Vec<String>,
}

impl Players {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::argument("a game needs at least one player"));
        }
        let mut seen = std::collections::HashSet::with_capacity(labels.len());
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::argument(format!("duplicate player label {label:?}")));
            }
        }
        Ok(Players { labels })
    }

    /// Players labelled `0..n`.
    pub fn anonymous(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()).collect())
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// A subset of players, bit `i` set when player `i` is a member.
#[derive(Copy, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub const fn from_bits(bits: u64) -> Self {
        Coalition(bits)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub fn grand(n: usize) -> Self {
        debug_assert!(n <= MAX_PLAYERS);
        Coalition((1u64 << n) - 1)
    }

    pub fn singleton(player: usize) -> Self {
        Coalition(1u64 << player)
    }

    pub fn from_members<I: IntoIterator<Item = usize>>(members: I) -> Self {
        Coalition(members.into_iter().fold(0, |acc, i| acc | (1u64 << i)))
    }

    pub fn contains(self, player: usize) -> bool {
        self.0 >> player & 1 == 1
    }

    pub fn with(self, player: usize) -> Self {
        Coalition(self.0 | (1u64 << player))
    }

    pub fn without(self, player: usize) -> Self {
        Coalition(self.0 & !(1u64 << player))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Member indices in ascending order.
    pub fn members(self) -> impl DoubleEndedIterator<Item = usize> {
        (0..64).filter(move |&i| self.0 >> i & 1 == 1)
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.members()).finish()
    }
}

/// A characteristic function `w`. Implementations must be pure: the same
/// coalition always yields the same worth, bit for bit.
pub trait CharacteristicFunction: Sync {
    fn player_count(&self) -> usize;

    fn worth(&self, coalition: Coalition) -> Result<f64>;

    /// Worth of every coalition, indexed by mask. Implementations may
    /// override this with a faster route but must agree with [`worth`]
    /// exactly.
    ///
    /// [`worth`]: CharacteristicFunction::worth
    fn worth_table(&self) -> Result<Vec<f64>> {
        let n = self.player_count();
        (0..1u64 << n)
            .into_par_iter()
            .map(|m| self.worth(Coalition(m)))
            .collect()
    }
}

impl<G: CharacteristicFunction + ?Sized> CharacteristicFunction for &G {
    fn player_count(&self) -> usize {
        (**self).player_count()
    }

    fn worth(&self, coalition: Coalition) -> Result<f64> {
        (**self).worth(coalition)
    }

    fn worth_table(&self) -> Result<Vec<f64>> {
        (**self).worth_table()
    }
}

/// A game given by an explicit worth for every coalition.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedGame {
    n: usize,
    worths: Vec<f64>,
}

impl TabulatedGame {
    pub fn new(n: usize, worths: Vec<f64>) -> Result<Self> {
        if n == 0 || n > 30 {
            return Err(Error::argument(format!("tabulated games support 1..=30 players, got {n}")));
        }
        if worths.len() != 1usize << n {
            return Err(Error::argument(format!(
                "expected {} worths for {n} players, got {}",
                1usize << n,
                worths.len()
            )));
        }
        Ok(TabulatedGame { n, worths })
    }

    pub fn from_fn<F: Fn(Coalition) -> f64>(n: usize, f: F) -> Result<Self> {
        let worths = (0..1u64 << n).map(|m| f(Coalition(m))).collect();
        Self::new(n, worths)
    }

    /// Tabulates any game through its [`CharacteristicFunction::worth_table`].
    pub fn tabulate<G: CharacteristicFunction + ?Sized>(game: &G) -> Result<Self> {
        Self::new(game.player_count(), game.worth_table()?)
    }

    pub fn worths(&self) -> &[f64] {
        &self.worths
    }
}

impl CharacteristicFunction for TabulatedGame {
    fn player_count(&self) -> usize {
        self.n
    }

    fn worth(&self, coalition: Coalition) -> Result<f64> {
        self.worths
            .get(coalition.bits() as usize)
            .copied()
            .ok_or_else(|| Error::argument(format!("coalition {coalition:?} outside a {}-player game", self.n)))
    }

    fn worth_table(&self) -> Result<Vec<f64>> {
        Ok(self.worths.clone())
    }
}

/// Memo table in front of a characteristic function. Transparent: cached
/// values are the ones the wrapped function returned.
pub struct WorthCache<G> {
    inner: G,
    table: RwLock<HashMap<u64, f64>>,
    calls: AtomicU64,
}

impl<G: CharacteristicFunction> WorthCache<G> {
    pub fn new(inner: G) -> Self {
        WorthCache {
            inner,
            table: RwLock::new(HashMap::new()),
            calls: AtomicU64::new(0),
        }
    }

    /// Distinct coalitions evaluated so far.
    pub fn distinct_evaluations(&self) -> usize {
        self.table.read().expect("worth cache poisoned").len()
    }

    /// Lookups served, hits included.
    pub fn lookups(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> G {
        self.inner
    }
}

impl<G: CharacteristicFunction> CharacteristicFunction for WorthCache<G> {
    fn player_count(&self) -> usize {
        self.inner.player_count()
    }

    fn worth(&self, coalition: Coalition) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(&w) = self.table.read().expect("worth cache poisoned").get(&coalition.bits()) {
            return Ok(w);
        }
        let w = self.inner.worth(coalition)?;
        self.table
            .write()
            .expect("worth cache poisoned")
            .insert(coalition.bits(), w);
        Ok(w)
    }

    fn worth_table(&self) -> Result<Vec<f64>> {
        self.inner.worth_table()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Sampling,
    Clustering,
    IndicatorProportional,
    EnergyBased,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Exact => "exact",
            Method::Sampling => "sampling",
            Method::Clustering => "clustering",
            Method::IndicatorProportional => "indicator-proportional",
            Method::EnergyBased => "energy-based",
        };
        f.write_str(s)
    }
}

/// Per-player allocation produced by one of the solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub method: Method,
    pub values: Vec<f64>,
    /// How many runs valued each player. Zero means "no value": the entry
    /// in `values` is a placeholder and must not be read as an allocation.
    pub coverage: Vec<u32>,
    pub seed: Option<u64>,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub wall_time: Option<Duration>,
}

impl AllocationResult {
    pub fn new(method: Method, values: Vec<f64>) -> Self {
        let coverage = vec![1; values.len()];
        AllocationResult {
            method,
            values,
            coverage,
            seed: None,
            diagnostics: BTreeMap::new(),
            wall_time: None,
        }
    }

    pub fn value(&self, player: usize) -> Option<f64> {
        (self.coverage[player] > 0).then(|| self.values[player])
    }

    pub fn is_fully_covered(&self) -> bool {
        self.coverage.iter().all(|&c| c > 0)
    }

    pub fn total(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.coverage)
            .filter(|(_, &c)| c > 0)
            .map(|(v, _)| v)
            .sum()
    }
}

/// Shapley weight `(k-1)!(n-k)!/n!` of a size-`k` coalition containing the
/// player, computed as `1 / (n * C(n-1, k-1))` with a running ratio.
pub fn marginal_weight(k: usize, n: usize) -> Result<f64> {
    if n == 0 || n > MAX_PLAYERS || k == 0 || k > n {
        return Err(Error::argument(format!(
            "marginal weight needs 1 <= k <= n <= {MAX_PLAYERS}, got k={k}, n={n}"
        )));
    }
    Ok(1.0 / (n as f64 * binomial(n - 1, k - 1)))
}

/// `C(n, k)` as a float, by running ratios.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |c, j| c * (n - j) as f64 / (j + 1) as f64)
}

/// `C(n, k)` in exact integer arithmetic, saturating at `u64::MAX`.
pub fn binomial_u64(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for j in 0..k {
        c = c * (n - j) as u128 / (j + 1) as u128;
        if c > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    c as u64
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Inserts a zero bit at position `at`, mapping masks over `n - 1` players
/// onto masks over `n` players that exclude player `at`. Order-preserving.
#[inline]
pub(crate) fn spread_without(bits: u64, at: usize) -> u64 {
    let low = bits & ((1u64 << at) - 1);
    ((bits >> at) << (at + 1)) | low
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactOptions {
    /// Player cap; larger games are rejected with a capacity error.
    pub cap: usize,
    /// Evaluate each coalition once through [`CharacteristicFunction::worth_table`].
    /// When off, every marginal calls [`CharacteristicFunction::worth`] afresh.
    pub memoize: bool,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            cap: DEFAULT_EXACT_CAP,
            memoize: true,
        }
    }
}

fn check_game<G: CharacteristicFunction + ?Sized>(players: &Players, w: &G) -> Result<usize> {
    let n = players.count();
    if w.player_count() != n {
        return Err(Error::argument(format!(
            "game has {} players but {n} labels were given",
            w.player_count()
        )));
    }
    Ok(n)
}

pub(crate) fn check_worth(coalition: Coalition, w: f64) -> Result<f64> {
    if !w.is_finite() {
        return Err(Error::data(format!("non-finite worth {w} for coalition {coalition:?}")));
    }
    if coalition.is_empty() && w != 0.0 {
        return Err(Error::data(format!("empty coalition must have zero worth, got {w}")));
    }
    Ok(w)
}

/// Sums one player's weighted marginals. `marginal(s)` receives a coalition
/// that excludes the player and returns `w(s + i) - w(s)`. Coalitions are
/// visited in ascending mask order; per-size sums are compensated, then
/// weighted and added in ascending size.
fn accumulate_player<F>(n: usize, player: usize, weights: &[f64], mut marginal: F) -> Result<f64>
where
    F: FnMut(u64) -> Result<f64>,
{
    let mut strata = vec![CompensatedSum::default(); n];
    for rest in 0..1u64 << (n - 1) {
        let s = spread_without(rest, player);
        let m = marginal(s)?;
        strata[rest.count_ones() as usize].add(m);
    }
    Ok(strata
        .iter()
        .zip(weights)
        .map(|(acc, w)| w * acc.value())
        .sum())
}

/// Exact Shapley value by enumerating every coalition.
pub fn shapley_exact<G>(players: &Players, w: &G, options: &ExactOptions) -> Result<AllocationResult>
where
    G: CharacteristicFunction + ?Sized,
{
    let started = Instant::now();
    let n = check_game(players, w)?;
    if n > options.cap || n > MAX_PLAYERS {
        return Err(Error::capacity(format!(
            "exact Shapley value is capped at {} players, got {n}; use sampling or clustering",
            options.cap.min(MAX_PLAYERS)
        )));
    }
    // weights[s] is the weight of a coalition of size s + 1
    let weights: Vec<f64> = (1..=n).map(|k| marginal_weight(k, n)).collect::<Result<_>>()?;

    let (values, evaluations) = if options.memoize {
        let table = w.worth_table()?;
        if table.len() != 1usize << n {
            return Err(Error::data(format!("worth table has {} entries, expected {}", table.len(), 1u64 << n)));
        }
        for (mask, &v) in table.iter().enumerate() {
            check_worth(Coalition(mask as u64), v)?;
        }
        let values = (0..n)
            .into_par_iter()
            .map(|i| {
                let bit = 1u64 << i;
                accumulate_player(n, i, &weights, |s| Ok(table[(s | bit) as usize] - table[s as usize]))
            })
            .collect::<Result<Vec<f64>>>()?;
        (values, table.len() as f64)
    } else {
        let values = (0..n)
            .into_par_iter()
            .map(|i| {
                accumulate_player(n, i, &weights, |s| {
                    let with = Coalition(s).with(i);
                    let a = check_worth(with, w.worth(with)?)?;
                    let b = check_worth(Coalition(s), w.worth(Coalition(s))?)?;
                    Ok(a - b)
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        (values, (n as f64) * (1u64 << n) as f64)
    };

    let mut result = AllocationResult::new(Method::Exact, values);
    result.diagnostics.insert("evaluations".into(), evaluations);
    result.wall_time = Some(started.elapsed());
    Ok(result)
}

/// Shapley value as the average marginal contribution over all `n!` join
/// orders. Independent of [`shapley_exact`]; meant as a test oracle.
pub fn shapley_permutation_oracle<G>(players: &Players, w: &G) -> Result<AllocationResult>
where
    G: CharacteristicFunction + ?Sized,
{
    let n = check_game(players, w)?;
    if n > ORACLE_CAP {
        return Err(Error::capacity(format!(
            "permutation oracle enumerates n! orders and is capped at {ORACLE_CAP} players, got {n}"
        )));
    }
    let mut table = Vec::with_capacity(1 << n);
    for mask in 0..1u64 << n {
        table.push(check_worth(Coalition(mask), w.worth(Coalition(mask))?)?);
    }

    let mut totals = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut visit = |order: &[usize]| {
        let mut mask = 0u64;
        for &p in order {
            let next = mask | (1u64 << p);
            totals[p] += table[next as usize] - table[mask as usize];
            mask = next;
        }
    };

    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut orders = 1u64;
    visit(&order);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order);
            orders += 1;
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }

    let values = totals.into_iter().map(|t| t / orders as f64).collect();
    let mut result = AllocationResult::new(Method::Exact, values);
    result.diagnostics.insert("orders".into(), orders as f64);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn glove() -> TabulatedGame {
        // players 0 and 1 hold left gloves, player 2 a right glove
        TabulatedGame::from_fn(3, |s| {
            if s.contains(2) && (s.contains(0) || s.contains(1)) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn weight_values() {
        assert_eq!(marginal_weight(1, 1).unwrap(), 1.0);
        assert!((marginal_weight(1, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((marginal_weight(2, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(marginal_weight(0, 3).is_err());
        assert!(marginal_weight(4, 3).is_err());
        assert!(marginal_weight(1, 64).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let n = 20;
        let total: f64 = (1..=n)
            .map(|k| binomial(n - 1, k - 1) * marginal_weight(k, n).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn weight_matches_factorial_form() {
        // (k-1)!(n-k)!/n! with exact factorials while they fit in f64
        let fact = |m: usize| (1..=m).map(|x| x as f64).product::<f64>();
        for n in 1..=18 {
            for k in 1..=n {
                let direct = fact(k - 1) * fact(n - k) / fact(n);
                let w = marginal_weight(k, n).unwrap();
                assert!(((w - direct) / direct).abs() < 1e-13, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn glove_game() {
        let players = Players::anonymous(3).unwrap();
        let exact = shapley_exact(&players, &glove(), &ExactOptions::default()).unwrap();
        let expected = [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0];
        for (v, e) in exact.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        let oracle = shapley_permutation_oracle(&players, &glove()).unwrap();
        for (v, e) in oracle.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn two_symmetric_players() {
        let (a, b) = (3.0, 10.0);
        let game = TabulatedGame::new(2, vec![0.0, a, a, b]).unwrap();
        let players = Players::anonymous(2).unwrap();
        let r = shapley_exact(&players, &game, &ExactOptions::default()).unwrap();
        assert_eq!(r.values, vec![b / 2.0, b / 2.0]);
    }

    #[test]
    fn null_player_is_exactly_zero() {
        // player 3 never changes worth
        let game = TabulatedGame::from_fn(4, |s| {
            let s = s.without(3);
            (s.bits() as f64).sqrt() * 1.7
        })
        .unwrap();
        let players = Players::anonymous(4).unwrap();
        let r = shapley_exact(&players, &game, &ExactOptions::default()).unwrap();
        assert_eq!(r.values[3].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn single_player_oracle() {
        let game = TabulatedGame::new(1, vec![0.0, 5.0]).unwrap();
        let players = Players::anonymous(1).unwrap();
        assert_eq!(shapley_permutation_oracle(&players, &game).unwrap().values, vec![5.0]);
        assert_eq!(
            shapley_exact(&players, &game, &ExactOptions::default()).unwrap().values,
            vec![5.0]
        );
    }

    #[test]
    fn caps_are_enforced() {
        let game = TabulatedGame::from_fn(11, |s| s.len() as f64).unwrap();
        let players = Players::anonymous(11).unwrap();
        assert!(matches!(
            shapley_permutation_oracle(&players, &game),
            Err(Error::Capacity(_))
        ));
        let opts = ExactOptions { cap: 10, memoize: true };
        assert!(matches!(shapley_exact(&players, &game, &opts), Err(Error::Capacity(_))));
    }

    #[test]
    fn rejects_bad_worths() {
        let players = Players::anonymous(2).unwrap();
        let nan = TabulatedGame::new(2, vec![0.0, f64::NAN, 1.0, 2.0]).unwrap();
        assert!(matches!(
            shapley_exact(&players, &nan, &ExactOptions::default()),
            Err(Error::Data(_))
        ));
        let nonzero_empty = TabulatedGame::new(2, vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            shapley_exact(&players, &nonzero_empty, &ExactOptions::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn player_labels_must_be_unique() {
        assert!(Players::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Players::new(vec![]).is_err());
    }

    #[test]
    fn spread_skips_player() {
        for at in 0..5 {
            let mut prev = None;
            for rest in 0..16u64 {
                let s = spread_without(rest, at);
                assert_eq!(s >> at & 1, 0);
                assert_eq!(s.count_ones(), rest.count_ones());
                if let Some(p) = prev {
                    assert!(s > p);
                }
                prev = Some(s);
            }
        }
    }

    #[test]
    fn exact_binomials() {
        assert_eq!(binomial_u64(15, 7), 6435);
        assert_eq!(binomial_u64(17, 8), 24310);
        assert_eq!(binomial_u64(5, 7), 0);
        assert_eq!(binomial(29, 14), 77558760.0);
    }

    #[test]
    fn cache_counts_distinct_coalitions() {
        let cache = WorthCache::new(glove());
        for _ in 0..3 {
            cache.worth(Coalition::from_members([0, 2])).unwrap();
        }
        assert_eq!(cache.distinct_evaluations(), 1);
        assert_eq!(cache.lookups(), 3);
    }
}
