//! Wasserstein distances between empirical point sets.
//!
//! Equal-size sets of up to [`EXACT_LIMIT`] points are matched exactly with
//! the Hungarian algorithm. Anything else uses the sliced distance: the
//! `p`-th power of the one-dimensional distance is averaged over
//! [`SLICE_DIRECTIONS`] fixed random directions before taking the root.

use rand_distr::{Distribution, StandardNormal};

use super::check_sets;
use crate::error::{Error, Result};

/// Largest set size solved by exact assignment.
pub const EXACT_LIMIT: usize = 512;
/// Number of projection directions of the sliced distance.
pub const SLICE_DIRECTIONS: usize = 128;
const SLICE_SEED: u64 = 0x5eed_51ce;

/// How a Wasserstein value was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WassersteinMode {
    Exact,
    Sliced,
}

impl WassersteinMode {
    pub fn name(self) -> &'static str {
        match self {
            WassersteinMode::Exact => "exact",
            WassersteinMode::Sliced => "sliced",
        }
    }
}

fn check_order(p: u32) -> Result<()> {
    if p == 0 {
        return Err(Error::invalid("Wasserstein order must be at least 1"));
    }
    Ok(())
}

fn ground_cost(a: &[f64], b: &[f64], p: u32) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    match p {
        1 => d2.sqrt(),
        2 => d2,
        _ => d2.sqrt().powi(p as i32),
    }
}

/// Minimum-cost perfect matching of a square cost matrix (row-major, `n × n`).
///
/// Returns the column assigned to every row. Shortest augmenting paths with
/// row/column potentials, `O(n³)`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based indices; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + col - 1] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    assignment
}

/// Exact `W_p` between two equal-size sets with uniform weights.
pub fn exact_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], p: u32) -> Result<f64> {
    check_sets(a, b)?;
    check_order(p)?;
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "exact assignment needs equal set sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut cost = Vec::with_capacity(n * n);
    for x in a {
        for y in b {
            cost.push(ground_cost(x, y, p));
        }
    }
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((total / n as f64).powf(1.0 / p as f64))
}

/// `W_p^p` between two empirical measures on the line; sorts its inputs.
pub fn wasserstein_1d_pow(a: &mut [f64], b: &mut [f64], p: u32) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let cost = |x: f64, y: f64| (x - y).abs().powi(p as i32);
    if a.len() == b.len() {
        return a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| cost(x, y))
            .sum::<f64>()
            / a.len() as f64;
    }
    // Match quantile functions over the merged breakpoints.
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (wa, wb);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let mass = left_a.min(left_b);
        total += mass * cost(a[i], b[j]);
        left_a -= mass;
        left_b -= mass;
        if left_a <= 1e-15 {
            i += 1;
            left_a = wa;
        }
        if left_b <= 1e-15 {
            j += 1;
            left_b = wb;
        }
    }
    total
}

/// Sliced `W_p` over `directions` seeded unit directions.
pub fn sliced_wasserstein(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    p: u32,
    directions: usize,
) -> Result<f64> {
    check_sets(a, b)?;
    check_order(p)?;
    let dim = a[0].len();
    let mut rng = crate::seeded_rng(SLICE_SEED, 0);
    let mut sum = 0.0;
    let mut pa = vec![0.0; a.len()];
    let mut pb = vec![0.0; b.len()];
    for _ in 0..directions {
        let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|d| *d /= norm);
        let project = |x: &Vec<f64>| x.iter().zip(&dir).map(|(u, v)| u * v).sum::<f64>();
        pa.iter_mut().zip(a).for_each(|(t, x)| *t = project(x));
        pb.iter_mut().zip(b).for_each(|(t, x)| *t = project(x));
        sum += wasserstein_1d_pow(&mut pa, &mut pb, p);
    }
    Ok((sum / directions as f64).powf(1.0 / p as f64))
}

/// `W_p` between two point sets, choosing exact or sliced computation.
pub fn wasserstein_with_mode(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    p: u32,
) -> Result<(f64, WassersteinMode)> {
    check_sets(a, b)?;
    if a.len() == b.len() && a.len() <= EXACT_LIMIT {
        Ok((exact_wasserstein(a, b, p)?, WassersteinMode::Exact))
    } else {
        Ok((
            sliced_wasserstein(a, b, p, SLICE_DIRECTIONS)?,
            WassersteinMode::Sliced,
        ))
    }
}

pub fn wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], p: u32) -> Result<f64> {
    Ok(wasserstein_with_mode(a, b, p)?.0)
}
