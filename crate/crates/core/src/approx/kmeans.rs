//! k-means over mean daily load profiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loads::{LoadTrace, INTERVALS_PER_DAY};

pub const MAX_CLUSTERS: usize = 25;
pub const MAX_ITERATIONS: usize = 300;
/// Independent k-means++ starts; the lowest-inertia solution is kept.
pub const RESTARTS: u64 = 10;

pub type Profile = [f64; INTERVALS_PER_DAY];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub customer_ids: Vec<String>,
    /// kWh per half-hour on an average day.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per customer, aligned with `customer_ids`.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

impl ClusterModel {
    pub fn customer_count(&self) -> usize {
        self.assignment.len()
    }

    /// Customer indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == c).collect()
    }

    /// Every customer in its own cluster, in input order.
    pub fn singletons(traces: &[LoadTrace]) -> Result<Self> {
        let k = traces.len();
        if k == 0 || k > MAX_CLUSTERS {
            return Err(Error::argument(format!("need 1 to {MAX_CLUSTERS} customers for singleton clusters, got {k}")));
        }
        Ok(ClusterModel {
            k,
            customer_ids: traces.iter().map(|t| t.customer_id.clone()).collect(),
            centroids: traces.iter().map(|t| t.mean_daily_profile().to_vec()).collect(),
            assignment: (0..k).collect(),
            inertia: 0.0,
        })
    }
}

fn distance(a: &Profile, b: &Profile) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &Profile, centroids: &[Profile]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(points: &[Profile], k: usize, rng: &mut ChaCha8Rng) -> Vec<Profile> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| distance(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // every point coincides with a centre already
            (0..points.len()).find(|i| !chosen.contains(i)).expect("k <= point count")
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

struct Solution {
    centroids: Vec<Profile>,
    assignment: Vec<usize>,
    inertia: f64,
}

fn lloyd(points: &[Profile], mut centroids: Vec<Profile>) -> Solution {
    let k = centroids.len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }

        let mut sums = vec![[0.0; INTERVALS_PER_DAY]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= counts[c] as f64;
                }
                centroids[c] = sums[c];
            }
        }
        // move the worst-fitting point of a shared cluster into each empty one
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..points.len())
                .filter(|&i| counts[assignment[i]] > 1)
                .map(|i| (i, distance(&points[i], &centroids[assignment[i]])))
                .filter(|&(_, d)| d > 0.0)
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = donor {
                counts[assignment[i]] -= 1;
                counts[c] = 1;
                centroids[c] = points[i];
            }
        }
    }
    let inertia = assignment
        .iter()
        .zip(points)
        .map(|(&a, p)| distance(p, &centroids[a]))
        .sum();
    Solution { centroids, assignment, inertia }
}

/// k-means over raw profiles. Deterministic per seed.
pub fn kmeans(points: &[Profile], k: usize, seed: u64) -> Result<(Vec<Profile>, Vec<usize>, f64)> {
    if k == 0 || k > MAX_CLUSTERS {
        return Err(Error::argument(format!("cluster count must be 1 to {MAX_CLUSTERS}, got {k}")));
    }
    if points.len() < k {
        return Err(Error::argument(format!("{} customers cannot form {k} clusters", points.len())));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::data("profiles must be finite"));
    }
    let mut best: Option<Solution> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart);
        let s = lloyd(points, seed_centroids(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| s.inertia < b.inertia) {
            best = Some(s);
        }
    }
    let best = best.expect("at least one restart");
    Ok((best.centroids, best.assignment, best.inertia))
}

/// Clusters customers by their mean daily profile.
pub fn build_cluster_model(traces: &[LoadTrace], k: usize, seed: u64) -> Result<ClusterModel> {
    let profiles: Vec<Profile> = traces.iter().map(LoadTrace::mean_daily_profile).collect();
    let (centroids, assignment, inertia) = kmeans(&profiles, k, seed)?;
    Ok(ClusterModel {
        k,
        customer_ids: traces.iter().map(|t| t.customer_id.clone()).collect(),
        centroids: centroids.into_iter().map(|c| c.to_vec()).collect(),
        assignment,
        inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loads::{generate_synthetic, Archetype, PopulationSpec};

    fn profile(f: impl Fn(usize) -> f64) -> Profile {
        std::array::from_fn(f)
    }

    #[test]
    fn identical_profiles_one_cluster() {
        let p = profile(|s| s as f64 * 0.01);
        let (c, a, inertia) = kmeans(&[p; 6], 1, 3).unwrap();
        assert_eq!(a, vec![0; 6]);
        assert!(c[0].iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(inertia < 1e-25);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let points: Vec<Profile> = (0..7).map(|i| profile(|s| ((s * (i + 1)) % 11) as f64)).collect();
        let (_, a, inertia) = kmeans(&points, 7, 0).unwrap();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        assert_eq!(inertia, 0.0);
    }

    #[test]
    fn recovers_archetypes() {
        let spec = PopulationSpec::new(vec![(Archetype::MorningPeak, 20), (Archetype::EveningPeak, 20)]);
        let pop = generate_synthetic(&spec, 11).unwrap();
        let model = build_cluster_model(&pop.traces, 2, 5).unwrap();
        let morning = model.assignment[0];
        let agree = model
            .assignment
            .iter()
            .zip(&pop.labels)
            .filter(|(&a, &l)| (a == morning) == (l == Archetype::MorningPeak))
            .count();
        assert!(agree * 100 >= 95 * pop.traces.len(), "{agree}");
    }

    #[test]
    fn deterministic_per_seed() {
        let points: Vec<Profile> = (0..30).map(|i| profile(|s| ((s * 7 + i * 13) % 17) as f64)).collect();
        assert_eq!(kmeans(&points, 4, 8).unwrap().1, kmeans(&points, 4, 8).unwrap().1);
    }

    #[test]
    fn rejects_bad_k() {
        let points = vec![profile(|_| 1.0); 3];
        assert!(matches!(kmeans(&points, 4, 0), Err(Error::Argument(_))));
        assert!(matches!(kmeans(&points, 0, 0), Err(Error::Argument(_))));
        assert!(matches!(kmeans(&vec![profile(|_| 1.0); 30], 26, 0), Err(Error::Argument(_))));
    }
}
