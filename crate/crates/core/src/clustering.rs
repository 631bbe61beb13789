//! k-means for the chart centroids `R_X` and `R_Y`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator streams for the two sides.
const STREAM_X: u64 = 11;
const STREAM_Y: u64 = 12;

/// Settings for the two k-means runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_x: 8,
            n_y: 8,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

/// Result of one k-means run.
#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia of the assignment made at the start of each Lloyd iteration,
    /// followed by the inertia of the final assignment.
    pub inertia_trace: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Index of the Euclidean-nearest centroid; ties go to the lowest index.
pub fn nearest_centroid(centroids: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignments = points
        .iter()
        .map(|p| {
            let i = nearest_centroid(centroids, p);
            inertia += squared_distance(p, &centroids[i]);
            i
        })
        .collect();
    (assignments, inertia)
}

/// k-means++ seeding: the first centroid uniformly, each next one with
/// probability proportional to the squared distance to the nearest chosen one.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut crate::Rng) -> Result<Vec<Vec<f64>>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(format!(
                "k-means needs {k} distinct points, found {}",
                centroids.len()
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = None;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 {
                chosen = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
        }
        // `chosen` is the last positive-weight point if rounding ran past the end.
        let next = points[chosen.expect("positive total weight")].clone();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &next));
        }
        centroids.push(next);
    }
    Ok(centroids)
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops when no centroid moves by more than `tol` or after `max_iter`
/// iterations. A cluster that loses all its points is re-seeded at the point
/// farthest from its current centroid.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    stream: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "k-means with k = {k} needs at least {k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points differ in dimension".into()));
    }

    let mut rng = crate::seeded_rng(seed, stream);
    let mut centroids = seed_centroids(points, k, &mut rng)?;
    let mut inertia_trace = Vec::new();
    let mut assignments;
    let mut iter = 0;
    loop {
        let (a, inertia) = assign(points, &centroids);
        assignments = a;
        inertia_trace.push(inertia);
        if iter == max_iter {
            break;
        }
        iter += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, squared_distance(p, &centroids[assignments[i]])))
                    .fold(
                        (0, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    )
                    .0;
                points[far].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            shift = shift.max(squared_distance(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < tol {
            let (a, inertia) = assign(points, &centroids);
            assignments = a;
            inertia_trace.push(inertia);
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia_trace,
    })
}

/// The chart centroids of both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterModel {
    pub centroids_x: Vec<Vec<f64>>,
    pub centroids_y: Vec<Vec<f64>>,
}

impl ClusterModel {
    /// Clusters the inputs and the outputs of a training set separately.
    pub fn fit(
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        config: &ClusterConfig,
        seed: u64,
    ) -> Result<Self> {
        let kx = kmeans(xs, config.n_x, seed, STREAM_X, config.max_iter, config.tol)?;
        let ky = kmeans(ys, config.n_y, seed, STREAM_Y, config.max_iter, config.tol)?;
        Ok(Self {
            centroids_x: kx.centroids,
            centroids_y: ky.centroids,
        })
    }

    pub fn n_x(&self) -> usize {
        self.centroids_x.len()
    }

    pub fn n_y(&self) -> usize {
        self.centroids_y.len()
    }

    pub fn assign_x(&self, x: &[f64]) -> usize {
        nearest_centroid(&self.centroids_x, x)
    }

    pub fn assign_y(&self, y: &[f64]) -> usize {
        nearest_centroid(&self.centroids_y, y)
    }
}
