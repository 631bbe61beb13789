//! Sampling `f(x)` and `f⁻¹(y)` from a trained model.
//!
//! Only one side of a pair is known at inference time, so the chart centroid
//! of the other side is borrowed from the training set: the `k` nearest
//! training pairs of the anchor form a neighborhood, and each emitted sample
//! draws one neighbor whose partner point picks the missing centroid. Since
//! the neighbor is redrawn per sample, one anchor can reach several charts.

use serde::{Deserialize, Serialize};

use crate::datasets::{self, DatasetId, Direction};
use crate::error::{Error, Result};
use crate::flow::{Fiber, DIM_X, DIM_Y};
use crate::numerics::Matrix;
use crate::training::TrainedModel;
use rand::Rng as _;

const INFERENCE_STREAM: u64 = 41;

/// Neighborhood size, sample count and seed of a sampling call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub k: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            k: 50,
            n: 200,
            seed: 0,
        }
    }
}

/// Indices of the `k` points nearest to `query`, closest first; equal
/// distances keep training-set order.
pub fn nearest_neighbors<'a, I>(points: I, query: &[f64], k: usize) -> Vec<usize>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut scored: Vec<(f64, usize)> = points
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let d: f64 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.into_iter().map(|(_, i)| i).collect()
}

fn check_request(
    model: &TrainedModel,
    anchor: &[f64],
    dim: usize,
    k: usize,
    n: usize,
) -> Result<()> {
    if model.dataset.is_empty() {
        return Err(Error::invalid("the model has no training pairs to search"));
    }
    if anchor.len() != dim || anchor.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "anchor must have {dim} finite coordinates, got {anchor:?}"
        )));
    }
    if k == 0 || k > model.dataset.len() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in 1..={}",
            model.dataset.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("at least one sample must be requested"));
    }
    Ok(())
}

/// Groups sample slots by the cluster that conditions them, in cluster order.
fn group_by_cluster(clusters: &[usize], count: usize) -> Vec<(usize, Vec<usize>)> {
    let mut groups = vec![Vec::new(); count];
    for (slot, &c) in clusters.iter().enumerate() {
        groups[c].push(slot);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .collect()
}

/// `n` samples of `f(x)` using `rng`.
pub fn sample_forward_with(
    model: &TrainedModel,
    x: &[f64],
    k: usize,
    n: usize,
    rng: &mut crate::Rng,
) -> Result<Vec<Vec<f64>>> {
    check_request(model, x, DIM_X, k, n)?;
    let pairs = &model.dataset.pairs;
    let i = model.clusters.assign_x(x);
    let neighborhood = nearest_neighbors(pairs.iter().map(|p| &p.x[..]), x, k);

    let mut charts = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = neighborhood[rng.random_range(0..neighborhood.len())];
        charts.push(model.clusters.assign_y(&pairs[pick].y));
        latents.push(model.priors.sample(Fiber::Z1, i, rng)?);
    }

    let mut out = vec![Vec::new(); n];
    for (j, slots) in group_by_cluster(&charts, model.clusters.n_y()) {
        let xs = Matrix::from_rows(&vec![x; slots.len()])?;
        let zs = Matrix::from_rows(&slots.iter().map(|&s| &latents[s][..]).collect::<Vec<_>>())?;
        let (y_hat, _) = model.network.forward(
            &xs,
            &zs,
            &model.clusters.centroids_x[i],
            &model.clusters.centroids_y[j],
        )?;
        for (row, &s) in slots.iter().enumerate() {
            out[s] = y_hat.row(row).to_vec();
        }
    }
    Ok(out)
}

/// `n` samples of `f⁻¹(y)` using `rng`.
pub fn sample_reverse_with(
    model: &TrainedModel,
    y: &[f64],
    k: usize,
    n: usize,
    rng: &mut crate::Rng,
) -> Result<Vec<Vec<f64>>> {
    check_request(model, y, DIM_Y, k, n)?;
    let pairs = &model.dataset.pairs;
    let j = model.clusters.assign_y(y);
    let neighborhood = nearest_neighbors(pairs.iter().map(|p| &p.y[..]), y, k);

    let mut charts = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = neighborhood[rng.random_range(0..neighborhood.len())];
        charts.push(model.clusters.assign_x(&pairs[pick].x));
        latents.push(model.priors.sample(Fiber::Z2, j, rng)?);
    }

    let mut out = vec![Vec::new(); n];
    for (i, slots) in group_by_cluster(&charts, model.clusters.n_x()) {
        let ys = Matrix::from_rows(&vec![y; slots.len()])?;
        let zs = Matrix::from_rows(&slots.iter().map(|&s| &latents[s][..]).collect::<Vec<_>>())?;
        let (x_hat, _) = model.network.inverse(
            &ys,
            &zs,
            &model.clusters.centroids_x[i],
            &model.clusters.centroids_y[j],
        )?;
        for (row, &s) in slots.iter().enumerate() {
            out[s] = x_hat.row(row).to_vec();
        }
    }
    Ok(out)
}

/// `cfg.n` samples of `f(x)`, seeded by `cfg.seed`.
pub fn sample_forward(
    model: &TrainedModel,
    x: &[f64],
    cfg: &InferenceConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = crate::seeded_rng(cfg.seed, INFERENCE_STREAM);
    sample_forward_with(model, x, cfg.k, cfg.n, &mut rng)
}

/// `cfg.n` samples of `f⁻¹(y)`, seeded by `cfg.seed`.
pub fn sample_reverse(
    model: &TrainedModel,
    y: &[f64],
    cfg: &InferenceConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = crate::seeded_rng(cfg.seed, INFERENCE_STREAM);
    sample_reverse_with(model, y, cfg.k, cfg.n, &mut rng)
}

/// Anything that can sample a conditional distribution in either direction.
pub trait ConditionalSampler {
    fn sample(
        &self,
        direction: Direction,
        anchor: &[f64],
        n: usize,
        rng: &mut crate::Rng,
    ) -> Result<Vec<Vec<f64>>>;
}

impl ConditionalSampler for TrainedModel {
    fn sample(
        &self,
        direction: Direction,
        anchor: &[f64],
        n: usize,
        rng: &mut crate::Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let k = self.config.inference.k;
        match direction {
            Direction::Forward => sample_forward_with(self, anchor, k, n, rng),
            Direction::Reverse => sample_reverse_with(self, anchor, k, n, rng),
        }
    }
}

/// The exact conditional laws of a dataset, usable in place of a model.
#[derive(Clone, Copy, Debug)]
pub struct OracleSampler(pub DatasetId);

impl ConditionalSampler for OracleSampler {
    fn sample(
        &self,
        direction: Direction,
        anchor: &[f64],
        n: usize,
        rng: &mut crate::Rng,
    ) -> Result<Vec<Vec<f64>>> {
        datasets::conditional_oracle(self.0, direction, anchor, n, rng)
    }
}
