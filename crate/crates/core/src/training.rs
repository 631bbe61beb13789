//! The training loop.
//!
//! Both sides of the training set are clustered once. Every epoch then visits
//! each cell `D_ij` (pairs whose input is nearest to `r_iˣ` and whose output
//! is nearest to `r_jʸ`) and takes one Adam step per chunk on
//!
//! ```text
//! L = chamfer(Ŷ, Y) + chamfer(X̂, X) + λ_z · (R(ẑ₁) + R(ẑ₂))
//! ```
//!
//! where `Ŷ, ẑ₂` come from the forward pass on `(X, Z₁ ~ 𝒟₁ⁱ)`, `X̂, ẑ₁` from
//! the inverse pass on `(Y, Z₂ ~ 𝒟₂ʲ)`, and `R` is the squared radial
//! deviation from the cluster's circle prior. After each step the priors
//! `𝒟₁ⁱ` and `𝒟₂ʲ` move toward the circle traced by `ẑ₁` and `ẑ₂`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::config::RunConfig;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::flow::{CirclePrior, Fiber, FiberPrior, FlowNetwork, DIM_X, DIM_Y, DIM_Z1, DIM_Z2};
use crate::numerics::{
    adam_step, chamfer_with_matches, radial_deviation, AdamConfig, AdamState, Matrix, Tape, Var,
};

const TRAIN_STREAM: u64 = 31;

/// Lower bound on every prior radius.
pub const MIN_PRIOR_RADIUS: f64 = 1e-3;

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs (zero-based) from which the learning rate is divided by ten.
    pub milestones: Vec<usize>,
    /// Largest number of pairs per optimizer step.
    pub batch_cap: usize,
    /// Cells with fewer pairs are skipped.
    pub min_cell_size: usize,
    /// Weight `λ_z` of the prior regularizer.
    pub reg_weight: f64,
    /// Seed for clustering, batch shuffling and latent draws.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-4,
            milestones: vec![1000, 1500],
            batch_cap: 256,
            min_cell_size: 4,
            reg_weight: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train.epochs must be at least 1"));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(Error::invalid(
                "train.reg_weight must be a finite non-negative number",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train.learning_rate must be positive"));
        }
        if self.batch_cap == 0 || self.min_cell_size == 0 {
            return Err(Error::invalid(
                "train.batch_cap and train.min_cell_size must be positive",
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            milestones: self.milestones.clone(),
            ..AdamConfig::default()
        }
    }
}

/// Everything inference needs: the network, the chart centroids, the learned
/// priors and the training pairs used for neighborhood lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub network: FlowNetwork,
    pub clusters: ClusterModel,
    pub priors: FiberPrior,
    pub dataset: Dataset,
    pub config: RunConfig,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        if self.priors.z1.len() != self.clusters.n_x()
            || self.priors.z2.len() != self.clusters.n_y()
        {
            return Err(Error::Mismatch(format!(
                "prior tables ({}, {}) do not match cluster counts ({}, {})",
                self.priors.z1.len(),
                self.priors.z2.len(),
                self.clusters.n_x(),
                self.clusters.n_y()
            )));
        }
        if self.dataset.is_empty() {
            return Err(Error::invalid("model has an empty training set"));
        }
        Ok(())
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub cell_i: usize,
    pub cell_j: usize,
    pub forward: f64,
    pub reverse: f64,
    pub reg: f64,
}

impl LossRecord {
    pub fn total(&self, reg_weight: f64) -> f64 {
        self.forward + self.reverse + reg_weight * self.reg
    }
}

/// Symmetric mean squared minimum distance between two point sets.
pub fn chamfer_loss(s_hat: &Matrix, s: &Matrix) -> Result<f64> {
    if s_hat.rows() == 0 || s.rows() == 0 {
        return Err(Error::invalid("chamfer loss needs non-empty point sets"));
    }
    if s_hat.cols() != s.cols() {
        return Err(Error::Shape(format!(
            "chamfer loss operands have dimensions {} and {}",
            s_hat.cols(),
            s.cols()
        )));
    }
    Ok(chamfer_with_matches(s_hat, s).0)
}

/// Mean squared deviation of the rows of `z_hat` from the circle `prior`, plus
/// the mean squared padding coordinate when `has_padding`.
pub fn prior_regularizer(z_hat: &Matrix, prior: &CirclePrior, has_padding: bool) -> Result<f64> {
    let expected = if has_padding { DIM_Z2 } else { DIM_Z1 };
    if z_hat.rows() == 0 || z_hat.cols() != expected {
        return Err(Error::Shape(format!(
            "regularizer expects a non-empty n×{expected} batch, got {}×{}",
            z_hat.rows(),
            z_hat.cols()
        )));
    }
    Ok(radial_deviation(
        z_hat,
        prior.center,
        prior.radius,
        has_padding,
    ))
}

/// Moves a circle prior toward the circle traced by the first two columns of `z`.
pub fn update_prior(prior: &CirclePrior, z: &Matrix, momentum: f64) -> Result<CirclePrior> {
    if z.rows() == 0 || z.cols() < 2 {
        return Err(Error::invalid("prior update needs a non-empty batch"));
    }
    let n = z.rows() as f64;
    let (mut m0, mut m1) = (0.0, 0.0);
    for r in 0..z.rows() {
        m0 += z.get(r, 0);
        m1 += z.get(r, 1);
    }
    let keep = 1.0 - momentum;
    let center = [
        momentum * prior.center[0] + keep * m0 / n,
        momentum * prior.center[1] + keep * m1 / n,
    ];
    let mean_radius = (0..z.rows())
        .map(|r| (z.get(r, 0) - center[0]).hypot(z.get(r, 1) - center[1]))
        .sum::<f64>()
        / n;
    let radius = (momentum * prior.radius + keep * mean_radius).max(MIN_PRIOR_RADIUS);
    Ok(CirclePrior { center, radius })
}

/// Inputs of one optimizer step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Matrix,
    pub y: Matrix,
    pub z1: Matrix,
    pub z2: Matrix,
    pub rx: Vec<f64>,
    pub ry: Vec<f64>,
    pub prior_z1: CirclePrior,
    pub prior_z2: CirclePrior,
}

/// Nodes of a recorded batch loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub forward: Var,
    pub reverse: Var,
    pub reg: Var,
    pub z1_hat: Var,
    pub z2_hat: Var,
}

/// Records the full training objective of `batch` on `tape`.
pub fn record_batch_loss(
    tape: &mut Tape,
    network: &FlowNetwork,
    batch: &Batch,
    reg_weight: f64,
) -> LossVars {
    let rx = tape.constant(Matrix::row_vector(&batch.rx));
    let ry = tape.constant(Matrix::row_vector(&batch.ry));

    let v = tape.constant(batch.x.hcat(&batch.z1));
    let out = network.forward_on_tape(tape, v, rx, ry, None);
    let y_hat = tape.columns(out, 0, DIM_Y);
    let z2_hat = tape.columns(out, DIM_Y, DIM_Z2);

    let w = tape.constant(batch.y.hcat(&batch.z2));
    let back = network.inverse_on_tape(tape, w, rx, ry);
    let x_hat = tape.columns(back, 0, DIM_X);
    let z1_hat = tape.columns(back, DIM_X, DIM_Z1);

    let y = tape.constant(batch.y.clone());
    let x = tape.constant(batch.x.clone());
    let forward = tape.chamfer(y_hat, y);
    let reverse = tape.chamfer(x_hat, x);
    let r1 = tape.radial_deviation(z1_hat, batch.prior_z1.center, batch.prior_z1.radius, false);
    let r2 = tape.radial_deviation(z2_hat, batch.prior_z2.center, batch.prior_z2.radius, true);
    let reg = tape.add(r1, r2);
    let distances = tape.add(forward, reverse);
    let weighted = tape.scale(reg, reg_weight);
    let total = tape.add(distances, weighted);
    LossVars {
        total,
        forward,
        reverse,
        reg,
        z1_hat,
        z2_hat,
    }
}

/// Pairs of one `(i, j)` cell, by training-set index.
#[derive(Clone, Debug)]
struct Cell {
    i: usize,
    j: usize,
    members: Vec<usize>,
}

/// Sizes of `ceil(len / cap)` near-equal chunks.
fn chunk_sizes(len: usize, cap: usize) -> Vec<usize> {
    let chunks = len.div_ceil(cap);
    let (base, extra) = (len / chunks, len % chunks);
    (0..chunks).map(|k| base + usize::from(k < extra)).collect()
}

/// Stateful training driver; [`train`] runs it for the configured epochs.
pub struct Trainer {
    model: TrainedModel,
    adam: AdamState,
    adam_config: AdamConfig,
    cells: Vec<Cell>,
    rng: crate::Rng,
    epoch: usize,
}

impl Trainer {
    /// Clusters the data, builds the cells and an identity-initialized network.
    pub fn new(dataset: &Dataset, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let xs = dataset.xs();
        let ys = dataset.ys();
        let clusters = ClusterModel::fit(&xs, &ys, &config.clustering, config.train.seed)?;

        let (nx, ny) = (clusters.n_x(), clusters.n_y());
        let mut members = vec![Vec::new(); nx * ny];
        for (k, (x, y)) in xs.iter().zip(&ys).enumerate() {
            members[clusters.assign_x(x) * ny + clusters.assign_y(y)].push(k);
        }
        let min = config.train.min_cell_size;
        let cells: Vec<Cell> = members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.len() >= min)
            .map(|(c, m)| Cell {
                i: c / ny,
                j: c % ny,
                members: m.clone(),
            })
            .collect();
        if cells.is_empty() {
            let occupancy = members
                .iter()
                .enumerate()
                .filter(|(_, m)| !m.is_empty())
                .map(|(c, m)| format!("({},{})={}", c / ny, c % ny, m.len()))
                .collect::<Vec<_>>()
                .join(" ");
            return Err(Error::NoTrainableCells {
                min_size: min,
                occupancy,
            });
        }

        let network = FlowNetwork::new(&config.flow)?;
        let adam = AdamState::new(&network.params);
        Ok(Self {
            model: TrainedModel {
                network,
                priors: FiberPrior::new(nx, ny),
                clusters,
                dataset: dataset.clone(),
                config: config.clone(),
            },
            adam,
            adam_config: config.train.adam(),
            cells,
            rng: crate::seeded_rng(config.train.seed, TRAIN_STREAM),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `(i, j, size)` of every cell that takes part in training.
    pub fn cell_sizes(&self) -> Vec<(usize, usize, usize)> {
        self.cells
            .iter()
            .map(|c| (c.i, c.j, c.members.len()))
            .collect()
    }

    fn batch(&self, cell: &Cell, rows: &[usize], rng: &mut crate::Rng) -> Result<Batch> {
        let data = &self.model.dataset.pairs;
        let x = Matrix::from_rows(&rows.iter().map(|&k| data[k].x).collect::<Vec<_>>())?;
        let y = Matrix::from_rows(&rows.iter().map(|&k| data[k].y).collect::<Vec<_>>())?;
        let priors = &self.model.priors;
        Ok(Batch {
            z1: priors.sample_matrix(Fiber::Z1, cell.i, rows.len(), rng)?,
            z2: priors.sample_matrix(Fiber::Z2, cell.j, rows.len(), rng)?,
            x,
            y,
            rx: self.model.clusters.centroids_x[cell.i].clone(),
            ry: self.model.clusters.centroids_y[cell.j].clone(),
            prior_z1: priors.z1[cell.i],
            prior_z2: priors.z2[cell.j],
        })
    }

    /// One pass over every cell; returns one record per optimizer step.
    pub fn run_epoch(&mut self) -> Result<Vec<LossRecord>> {
        let reg_weight = self.model.config.train.reg_weight;
        let cap = self.model.config.train.batch_cap;
        let momentum = self.model.priors.momentum;
        let mut log = Vec::new();
        let cells = std::mem::take(&mut self.cells);
        let mut rng = self.rng.clone();
        let result = (|| {
            for cell in &cells {
                let mut order = cell.members.clone();
                order.shuffle(&mut rng);
                let mut start = 0;
                for size in chunk_sizes(order.len(), cap) {
                    let rows = &order[start..start + size];
                    start += size;
                    let batch = self.batch(cell, rows, &mut rng)?;

                    let mut tape = Tape::new(&self.model.network.params);
                    let vars =
                        record_batch_loss(&mut tape, &self.model.network, &batch, reg_weight);
                    let grads = tape.backward(vars.total)?;
                    let record = LossRecord {
                        epoch: self.epoch,
                        cell_i: cell.i,
                        cell_j: cell.j,
                        forward: tape.value(vars.forward).item(),
                        reverse: tape.value(vars.reverse).item(),
                        reg: tape.value(vars.reg).item(),
                    };
                    let z1_hat = tape.value(vars.z1_hat).clone();
                    let z2_hat = tape.value(vars.z2_hat).clone();
                    drop(tape);

                    adam_step(
                        &mut self.model.network.params,
                        &grads,
                        &mut self.adam,
                        &self.adam_config,
                        self.epoch,
                    )?;
                    if !self.model.network.params.is_finite() {
                        return Err(Error::NonFinite {
                            index: 0,
                            op: "adam parameter update",
                        });
                    }
                    let priors = &mut self.model.priors;
                    priors.z1[cell.i] = update_prior(&priors.z1[cell.i], &z1_hat, momentum)?;
                    priors.z2[cell.j] = update_prior(&priors.z2[cell.j], &z2_hat, momentum)?;
                    log.push(record);
                }
            }
            Ok(())
        })();
        self.cells = cells;
        self.rng = rng;
        result?;
        self.epoch += 1;
        Ok(log)
    }

    /// Objective summed over every chunk of every cell, with latent draws from
    /// a generator seeded by `seed`; no parameters change.
    pub fn total_loss(&self, seed: u64) -> Result<f64> {
        let reg_weight = self.model.config.train.reg_weight;
        let cap = self.model.config.train.batch_cap;
        let mut rng = crate::seeded_rng(seed, TRAIN_STREAM + 1);
        let mut total = 0.0;
        for cell in &self.cells {
            let mut start = 0;
            for size in chunk_sizes(cell.members.len(), cap) {
                let batch = self.batch(cell, &cell.members[start..start + size], &mut rng)?;
                start += size;
                let mut tape = Tape::new(&self.model.network.params);
                let vars = record_batch_loss(&mut tape, &self.model.network, &batch, reg_weight);
                tape.check_finite()?;
                total += tape.value(vars.total).item();
            }
        }
        Ok(total)
    }

    pub fn into_model(self) -> TrainedModel {
        self.model
    }
}

/// Runs the full schedule; `progress` is called after every epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &RunConfig,
    mut progress: impl FnMut(usize, &[LossRecord]),
) -> Result<(TrainedModel, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(dataset, config)?;
    let mut log = Vec::new();
    for _ in 0..config.train.epochs {
        let records = trainer.run_epoch()?;
        progress(trainer.epoch(), &records);
        log.extend(records);
    }
    Ok((trainer.into_model(), log))
}

/// Runs the full schedule.
pub fn train(dataset: &Dataset, config: &RunConfig) -> Result<(TrainedModel, Vec<LossRecord>)> {
    train_with_progress(dataset, config, |_, _| {})
}
