use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BaselineError;

/// How a partition is scored when choosing among restarts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Sum of squared Euclidean distances.
    #[default]
    Squared,
    /// Sum of plain Euclidean distances.
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub objective: Objective,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            restarts: 3,
            max_iters: 300,
            tol: 1e-6,
            objective: Objective::Squared,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansResult<const D: usize> {
    pub centroids: Vec<[f64; D]>,
    pub assignments: Vec<u8>,
    /// Objective value of the returned partition.
    pub inertia: f64,
    pub restart: usize,
    pub iterations: usize,
    /// Squared-distance inertia after each assignment step of the winning
    /// restart.
    pub inertia_trace: Vec<f64>,
    /// Traces of every restart, in restart order.
    pub all_traces: Vec<Vec<f64>>,
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest<const D: usize>(p: &[f64; D], centroids: &[[f64; D]]) -> (usize, f64) {
    let mut best = (0, dist2(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

struct Run<const D: usize> {
    centroids: Vec<[f64; D]>,
    assignments: Vec<u8>,
    trace: Vec<f64>,
    iterations: usize,
}

fn lloyd<const D: usize>(points: &[[f64; D]], cfg: &KmeansConfig, seed: u64) -> Run<D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.k;
    let mut centroids: Vec<[f64; D]> = sample(&mut rng, points.len(), k)
        .into_iter()
        .map(|i| points[i])
        .collect();
    let mut assignments = vec![u8::MAX; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            if assignments[i] != j as u8 {
                assignments[i] = j as u8;
                changed = true;
            }
            dists[i] = d;
        }
        trace.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; D]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a as usize] += 1;
            for (s, v) in sums[a as usize].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            let next = if counts[j] == 0 {
                // Empty cluster: reseed on the point worst served by its
                // current centroid.
                let far = dists
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &d)| if d > dists[b] { i } else { b });
                dists[far] = 0.0;
                points[far]
            } else {
                sums[j].map(|s| s / counts[j] as f64)
            };
            shift = shift.max(dist2(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if shift < cfg.tol {
            // Centroids settled; record the final assignment.
            for (i, p) in points.iter().enumerate() {
                let (j, d) = nearest(p, &centroids);
                assignments[i] = j as u8;
                dists[i] = d;
            }
            trace.push(dists.iter().sum());
            break;
        }
    }
    Run {
        centroids,
        assignments,
        trace,
        iterations,
    }
}

fn objective<const D: usize>(points: &[[f64; D]], run: &Run<D>, obj: Objective) -> f64 {
    match obj {
        Objective::Squared => *run.trace.last().expect("at least one assignment"),
        Objective::Euclidean => points
            .iter()
            .zip(&run.assignments)
            .map(|(p, &a)| dist2(p, &run.centroids[a as usize]).sqrt())
            .sum(),
    }
}

/// Renumbers clusters by ascending centroid (lexicographic), so clusterings
/// of similar data use comparable ids.
fn canonical_order<const D: usize>(
    centroids: Vec<[f64; D]>,
    assignments: Vec<u8>,
) -> (Vec<[f64; D]>, Vec<u8>) {
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| {
        centroids[a]
            .iter()
            .zip(&centroids[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rank = vec![0u8; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new as u8;
    }
    let sorted = order.iter().map(|&i| centroids[i]).collect();
    (
        sorted,
        assignments.into_iter().map(|a| rank[a as usize]).collect(),
    )
}

impl KmeansConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.k == 0 || self.k > u8::MAX as usize || self.restarts == 0 || self.max_iters == 0 {
            return Err(BaselineError::InvalidConfig(format!(
                "k = {}, restarts = {}, max_iters = {}",
                self.k, self.restarts, self.max_iters
            )));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(BaselineError::InvalidConfig(format!(
                "tolerance {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Lloyd's algorithm from `restarts` random-point initializations; the
/// partition with the lowest objective wins, ties to the earlier restart.
/// Returned clusters are numbered in ascending centroid order.
pub fn kmeans<const D: usize>(
    points: &[[f64; D]],
    cfg: &KmeansConfig,
    rng: &mut impl Rng,
) -> Result<KmeansResult<D>, BaselineError> {
    cfg.validate()?;
    if points.len() < cfg.k {
        return Err(BaselineError::TooFewPoints {
            points: points.len(),
            k: cfg.k,
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(BaselineError::NonFinite);
    }
    let seeds: Vec<u64> = (0..cfg.restarts).map(|_| rng.gen()).collect();
    let runs: Vec<Run<D>> = seeds.par_iter().map(|&s| lloyd(points, cfg, s)).collect();
    let scores: Vec<f64> = runs
        .iter()
        .map(|r| objective(points, r, cfg.objective))
        .collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))
        .expect("at least one restart");
    let all_traces = runs.iter().map(|r| r.trace.clone()).collect();
    let run = runs.into_iter().nth(best).expect("index in range");
    let (centroids, assignments) = canonical_order(run.centroids, run.assignments);
    Ok(KmeansResult {
        centroids,
        assignments,
        inertia: scores[best],
        restart: best,
        iterations: run.iterations,
        inertia_trace: run.trace,
        all_traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(rng: &mut impl Rng, per: usize, sep: f64) -> (Vec<[f64; 3]>, Vec<u8>) {
        let n = Normal::new(0.0, 1.0).unwrap();
        let centers = [[0.0, 0.0, 0.0], [sep, 0.0, 0.0], [0.0, sep, sep]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(ctr.map(|v| v + n.sample(rng)));
                truth.push(c as u8);
            }
        }
        (pts, truth)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let cfg = KmeansConfig {
            k: 1,
            ..Default::default()
        };
        let r = kmeans(&pts, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((r.centroids[0][0] - 3.0).abs() < 1e-12 && (r.centroids[0][1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn planted_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (pts, truth) = blobs(&mut rng, 300, 12.0);
        let r = kmeans(&pts, &KmeansConfig::default(), &mut rng).unwrap();
        // Every planted blob maps to a single cluster, and the map is 1-1.
        let mut map = [u8::MAX; 3];
        for (&t, &a) in truth.iter().zip(&r.assignments) {
            if map[t as usize] == u8::MAX {
                map[t as usize] = a;
            }
            assert_eq!(map[t as usize], a);
        }
        assert!(map[0] != map[1] && map[1] != map[2] && map[0] != map[2]);
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let (pts, _) = blobs(&mut rng, 100, 1.5 + trial as f64 * 0.3);
            let cfg = KmeansConfig {
                k: 4,
                ..Default::default()
            };
            let r = kmeans(&pts, &cfg, &mut rng).unwrap();
            for trace in &r.all_traces {
                for w in trace.windows(2) {
                    assert!(w[1] <= w[0], "{trace:?}");
                }
            }
        }
    }

    #[test]
    fn winner_has_lowest_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (pts, _) = blobs(&mut rng, 80, 2.0);
        let cfg = KmeansConfig {
            k: 5,
            restarts: 6,
            ..Default::default()
        };
        let r = kmeans(&pts, &cfg, &mut rng).unwrap();
        for t in &r.all_traces {
            assert!(r.inertia <= *t.last().unwrap());
        }
    }

    #[test]
    fn duplicate_points_reseed_empty_clusters() {
        let mut pts = vec![[0.0, 0.0]; 50];
        pts.push([10.0, 10.0]);
        pts.push([20.0, 0.0]);
        let r = kmeans(
            &pts,
            &KmeansConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn clusters_are_numbered_by_centroid() {
        let pts = [
            [5.0, 0.0],
            [5.1, 0.0],
            [-3.0, 1.0],
            [-3.1, 1.0],
            [0.0, 9.0],
            [0.0, 9.2],
        ];
        for seed in 0..5 {
            let r = kmeans(
                &pts,
                &KmeansConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            assert_eq!(r.assignments, vec![2, 2, 0, 0, 1, 1]);
        }
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            kmeans(&[[0.0]; 2], &KmeansConfig::default(), &mut rng),
            Err(BaselineError::TooFewPoints { .. })
        ));
        assert!(kmeans(&[[f64::NAN]; 4], &KmeansConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn euclidean_objective_is_reported() {
        let pts = [[0.0], [1.0], [10.0], [11.0], [30.0]];
        let cfg = KmeansConfig {
            objective: Objective::Euclidean,
            ..Default::default()
        };
        let r = kmeans(&pts, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let want: f64 = pts
            .iter()
            .zip(&r.assignments)
            .map(|(p, &a)| (p[0] - r.centroids[a as usize][0]).abs())
            .sum();
        assert!((r.inertia - want).abs() < 1e-12);
    }
}
