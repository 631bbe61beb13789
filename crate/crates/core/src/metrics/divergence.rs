use super::check_sets;
use crate::error::{Error, Result};
use crate::numerics::{chamfer_with_matches, Matrix};

/// Lower bound on the kernel bandwidth.
pub const MIN_BANDWIDTH: f64 = 1e-6;
/// Lower bound on nearest-neighbor distances in the KL estimator.
pub const MIN_DISTANCE: f64 = 1e-12;

/// Below this many pairs the median is taken by sorting all distances.
const DIRECT_MEDIAN_PAIRS: usize = 1 << 22;
const MEDIAN_BINS: usize = 1 << 14;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn to_matrix(points: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(points)
}

/// Symmetric mean squared minimum distance; the same computation as the
/// training chamfer loss.
pub fn msmd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_sets(a, b)?;
    Ok(chamfer_with_matches(&to_matrix(a)?, &to_matrix(b)?).0)
}

/// Median of all pairwise distances between distinct points of `points`.
///
/// Large sets use two passes: a histogram locates the median ranks, then only
/// the distances in the selected bins are sorted.
pub fn median_pairwise_distance(points: &[&[f64]]) -> f64 {
    let n = points.len();
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs == 0 {
        return 0.0;
    }
    let for_each_pair = |f: &mut dyn FnMut(f64)| {
        for i in 0..n {
            for j in i + 1..n {
                f(distance(points[i], points[j]));
            }
        }
    };
    let (lo_rank, hi_rank) = ((pairs - 1) / 2, pairs / 2);

    if pairs <= DIRECT_MEDIAN_PAIRS {
        let mut all = Vec::with_capacity(pairs);
        for_each_pair(&mut |d| all.push(d));
        all.sort_by(f64::total_cmp);
        return 0.5 * (all[lo_rank] + all[hi_rank]);
    }

    let mut max = 0.0f64;
    for_each_pair(&mut |d| max = max.max(d));
    if max == 0.0 {
        return 0.0;
    }
    let bin = |d: f64| (((d / max) * MEDIAN_BINS as f64) as usize).min(MEDIAN_BINS - 1);
    let mut counts = vec![0usize; MEDIAN_BINS];
    for_each_pair(&mut |d| counts[bin(d)] += 1);

    // Bin holding each rank and the number of distances in lower bins.
    let locate = |rank: usize| {
        let mut below = 0;
        for (b, &c) in counts.iter().enumerate() {
            if below + c > rank {
                return (b, below);
            }
            below += c;
        }
        unreachable!("rank within the pair count")
    };
    let (lo_bin, lo_below) = locate(lo_rank);
    let (hi_bin, hi_below) = locate(hi_rank);
    let mut lo_vals = Vec::with_capacity(counts[lo_bin]);
    let mut hi_vals = Vec::new();
    for_each_pair(&mut |d| {
        let b = bin(d);
        if b == lo_bin {
            lo_vals.push(d);
        } else if b == hi_bin {
            hi_vals.push(d);
        }
    });
    lo_vals.sort_by(f64::total_cmp);
    let lo = lo_vals[lo_rank - lo_below];
    let hi = if hi_bin == lo_bin {
        lo_vals[hi_rank - lo_below]
    } else {
        hi_vals.sort_by(f64::total_cmp);
        hi_vals[hi_rank - hi_below]
    };
    0.5 * (lo + hi)
}

/// Biased (V-statistic) estimate of the squared maximum mean discrepancy with a
/// Gaussian kernel whose bandwidth is the median pairwise distance of `A ∪ B`.
pub fn mmd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_sets(a, b)?;
    let union: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
    let sigma = median_pairwise_distance(&union).max(MIN_BANDWIDTH);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let mean_kernel = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        let mut total = 0.0;
        for u in p {
            let mut row = 0.0;
            for v in q {
                let d2: f64 = u.iter().zip(v).map(|(s, t)| (s - t) * (s - t)).sum();
                row += (-gamma * d2).exp();
            }
            total += row;
        }
        total / (p.len() * q.len()) as f64
    };
    let kaa = mean_kernel(a, a);
    let kbb = mean_kernel(b, b);
    let kab = mean_kernel(a, b);
    let kba = mean_kernel(b, a);
    // kab and kba agree up to rounding; averaging them makes the estimate
    // exactly symmetric in its arguments.
    Ok((kaa + kbb - (kab + kba)).max(0.0))
}

/// Distance from `query` to its `k`-th nearest point of `points`, skipping the
/// index `skip`.
fn kth_distance(points: &[Vec<f64>], query: &[f64], k: usize, skip: Option<usize>) -> f64 {
    // Ascending buffer of the k smallest squared distances.
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for (i, p) in points.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let d2: f64 = p.iter().zip(query).map(|(u, v)| (u - v) * (u - v)).sum();
        if best.len() == k && d2 >= best[k - 1] {
            continue;
        }
        let pos = best.partition_point(|&x| x <= d2);
        best.insert(pos, d2);
        best.truncate(k);
    }
    best[k - 1].sqrt()
}

/// k-nearest-neighbor estimate of `KL(P ‖ Q)` from samples `a ~ P`, `b ~ Q`:
///
/// ```text
/// (d / n) Σᵢ log(ν_k(aᵢ) / ρ_k(aᵢ)) + log(m / (n − 1))
/// ```
///
/// with `ρ_k` the k-th neighbor distance within `a` (excluding the point
/// itself) and `ν_k` the k-th neighbor distance in `b`. The estimate can be
/// negative.
pub fn knn_kl(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> Result<f64> {
    check_sets(a, b)?;
    if k == 0 || k >= a.len() || k >= b.len() {
        return Err(Error::invalid(format!(
            "k-NN KL needs 1 <= k < min(|A|, |B|), got k = {k} with {} and {} points",
            a.len(),
            b.len()
        )));
    }
    let (n, m, d) = (a.len() as f64, b.len() as f64, a[0].len() as f64);
    let mut sum = 0.0;
    for (i, x) in a.iter().enumerate() {
        let rho = kth_distance(a, x, k, Some(i)).max(MIN_DISTANCE);
        let nu = kth_distance(b, x, k, None).max(MIN_DISTANCE);
        sum += (nu / rho).ln();
    }
    Ok(d / n * sum + (m / (n - 1.0)).ln())
}
