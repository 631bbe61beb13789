//! The conditionally invertible network and its fiber priors.
//!
//! In the forward direction a vector `v = (x, z₁) ∈ ℝ⁵` passes through
//!
//! ```text
//! CondAffine(r_X) → K × [Coupling(3 | 2) → Permutation] → CondAffine(r_Y)
//! ```
//!
//! and is split into `(y, z₂)`. The conditional affine layers play the role of
//! local trivializations: the first leaves the chart around the input centroid
//! `r_X`, the last enters the chart around the output centroid `r_Y`. Every
//! layer is bijective for fixed centroids, so the reverse direction runs the
//! same layers inverted in reverse order.
//!
//! Log-scales are soft-clamped as `s_max · tanh(s / s_max)` and every subnet
//! ends in a zero-initialized linear layer, so a fresh network is the
//! composition of its permutations.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datasets::Side;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

pub const DIM_X: usize = 3;
pub const DIM_Z1: usize = 2;
pub const DIM_Y: usize = 2;
pub const DIM_Z2: usize = 3;
/// Total width of the invertible map.
pub const DIM: usize = DIM_X + DIM_Z1;
/// Width of the untouched half of a coupling block.
pub const COUPLING_SPLIT: usize = 3;

const PERMUTATION_STREAM: u64 = 21;
const INIT_STREAM: u64 = 22;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Number of coupling blocks.
    pub blocks: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Bound on the magnitude of every applied log-scale.
    pub scale_clamp: f64,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            hidden_width: 64,
            hidden_layers: 2,
            scale_clamp: 2.0,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::invalid("flow.hidden_width must be positive"));
        }
        if !(self.scale_clamp > 0.0 && self.scale_clamp.is_finite()) {
            return Err(Error::invalid(
                "flow.scale_clamp must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Fully connected tanh network; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Subnet {
    /// `(weight, bias)` per layer; weights are `out × in`, biases `1 × out`.
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Subnet {
    fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut crate::Rng) -> Self {
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = if k == last {
                    Matrix::zeros(fan_out, fan_in)
                } else {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let data = (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-a..=a))
                        .collect();
                    Matrix::from_vec(fan_out, fan_in, data).expect("sized")
                };
                let w = store.add(format!("{prefix}.l{k}.weight"), weight);
                let b = store.add(format!("{prefix}.l{k}.bias"), Matrix::zeros(1, fan_out));
                (w, b)
            })
            .collect();
        Self { layers }
    }

    fn apply(&self, tape: &mut Tape, input: Var) -> Var {
        let mut h = input;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(w), tape.param(b));
            h = tape.matmul_t(h, w);
            h = tape.add_row(h, b);
            if k != last {
                h = tape.tanh(h);
            }
        }
        h
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// One invertible layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `v ↦ v ⊙ exp(ŝ(c)) + t(c)` with `c` the centroid of `condition`.
    CondAffine { condition: Side, subnet: Subnet },
    /// `(u₁, u₂) ↦ (u₁, u₂ ⊙ exp(ŝ(u₁)) + t(u₁))`.
    Coupling { subnet: Subnet },
    /// `out[k] = v[perm[k]]`.
    Permutation { perm: Vec<usize> },
}

/// The invertible map `Φ` together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetwork {
    pub config: FlowConfig,
    pub params: ParamStore,
    pub layers: Vec<Layer>,
}

fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

impl FlowNetwork {
    /// Builds an identity-initialized network from `config`.
    pub fn new(config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init_rng = crate::seeded_rng(config.seed, INIT_STREAM);
        let mut perm_rng = crate::seeded_rng(config.seed, PERMUTATION_STREAM);
        let hidden = vec![config.hidden_width; config.hidden_layers];
        let dims = |input: usize, output: usize| {
            let mut d = vec![input];
            d.extend(&hidden);
            d.push(output);
            d
        };

        let mut layers = Vec::with_capacity(2 * config.blocks + 2);
        layers.push(Layer::CondAffine {
            condition: Side::X,
            subnet: Subnet::new(
                &mut params,
                "layer0.cond_x",
                &dims(DIM_X, 2 * DIM),
                &mut init_rng,
            ),
        });
        for _ in 0..config.blocks {
            let subnet = Subnet::new(
                &mut params,
                &format!("layer{}.coupling", layers.len()),
                &dims(COUPLING_SPLIT, 2 * (DIM - COUPLING_SPLIT)),
                &mut init_rng,
            );
            layers.push(Layer::Coupling { subnet });
            let mut perm: Vec<usize> = (0..DIM).collect();
            perm.shuffle(&mut perm_rng);
            layers.push(Layer::Permutation { perm });
        }
        let name = format!("layer{}.cond_y", layers.len());
        layers.push(Layer::CondAffine {
            condition: Side::Y,
            subnet: Subnet::new(&mut params, &name, &dims(DIM_Y, 2 * DIM), &mut init_rng),
        });
        Ok(Self {
            config: config.clone(),
            params,
            layers,
        })
    }

    /// The permutation a freshly initialized network applies: its output is
    /// `v.permute_columns(&composed_permutation())`.
    pub fn composed_permutation(&self) -> Vec<usize> {
        let mut cur: Vec<usize> = (0..DIM).collect();
        for layer in &self.layers {
            if let Layer::Permutation { perm } = layer {
                cur = perm.iter().map(|&p| cur[p]).collect();
            }
        }
        cur
    }

    fn clamp(&self, tape: &mut Tape, raw: Var) -> Var {
        let smax = self.config.scale_clamp;
        let scaled = tape.scale(raw, 1.0 / smax);
        let bounded = tape.tanh(scaled);
        tape.scale(bounded, smax)
    }

    /// Log-scale and shift of a conditional affine layer, each `1 × DIM`.
    fn affine_params(&self, tape: &mut Tape, subnet: &Subnet, condition: Var) -> (Var, Var) {
        let raw = subnet.apply(tape, condition);
        let s_raw = tape.columns(raw, 0, DIM);
        let shift = tape.columns(raw, DIM, DIM);
        (self.clamp(tape, s_raw), shift)
    }

    /// Log-scale and shift of a coupling block, each `rows × 2`.
    fn coupling_params(&self, tape: &mut Tape, subnet: &Subnet, u1: Var) -> (Var, Var) {
        let width = DIM - COUPLING_SPLIT;
        let raw = subnet.apply(tape, u1);
        let s_raw = tape.columns(raw, 0, width);
        let shift = tape.columns(raw, width, width);
        (self.clamp(tape, s_raw), shift)
    }

    /// Records the forward map of the rows of `v` (`rows × DIM`) on `tape`.
    ///
    /// The applied log-scales are appended to `log_scales` when given.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        v: Var,
        rx: Var,
        ry: Var,
        mut log_scales: Option<&mut Vec<Var>>,
    ) -> Var {
        let rows = tape.value(v).rows();
        let mut v = v;
        for layer in &self.layers {
            v = match layer {
                Layer::CondAffine { condition, subnet } => {
                    let c = match condition {
                        Side::X => rx,
                        Side::Y => ry,
                    };
                    let (s, t) = self.affine_params(tape, subnet, c);
                    if let Some(acc) = log_scales.as_deref_mut() {
                        acc.push(s);
                    }
                    let es = tape.exp(s);
                    let es = tape.repeat_rows(es, rows);
                    let t = tape.repeat_rows(t, rows);
                    let scaled = tape.mul(v, es);
                    tape.add(scaled, t)
                }
                Layer::Coupling { subnet } => {
                    let u1 = tape.columns(v, 0, COUPLING_SPLIT);
                    let u2 = tape.columns(v, COUPLING_SPLIT, DIM - COUPLING_SPLIT);
                    let (s, t) = self.coupling_params(tape, subnet, u1);
                    if let Some(acc) = log_scales.as_deref_mut() {
                        acc.push(s);
                    }
                    let es = tape.exp(s);
                    let scaled = tape.mul(u2, es);
                    let u2 = tape.add(scaled, t);
                    tape.concat(u1, u2)
                }
                Layer::Permutation { perm } => tape.permute(v, perm),
            };
        }
        v
    }

    /// Records the inverse map of the rows of `w` (`rows × DIM`) on `tape`.
    pub fn inverse_on_tape(&self, tape: &mut Tape, w: Var, rx: Var, ry: Var) -> Var {
        let rows = tape.value(w).rows();
        let mut v = w;
        for layer in self.layers.iter().rev() {
            v = match layer {
                Layer::CondAffine { condition, subnet } => {
                    let c = match condition {
                        Side::X => rx,
                        Side::Y => ry,
                    };
                    let (s, t) = self.affine_params(tape, subnet, c);
                    let neg = tape.scale(s, -1.0);
                    let es = tape.exp(neg);
                    let es = tape.repeat_rows(es, rows);
                    let t = tape.repeat_rows(t, rows);
                    let shifted = tape.sub(v, t);
                    tape.mul(shifted, es)
                }
                Layer::Coupling { subnet } => {
                    let u1 = tape.columns(v, 0, COUPLING_SPLIT);
                    let u2 = tape.columns(v, COUPLING_SPLIT, DIM - COUPLING_SPLIT);
                    let (s, t) = self.coupling_params(tape, subnet, u1);
                    let neg = tape.scale(s, -1.0);
                    let es = tape.exp(neg);
                    let shifted = tape.sub(u2, t);
                    let u2 = tape.mul(shifted, es);
                    tape.concat(u1, u2)
                }
                Layer::Permutation { perm } => tape.permute(v, &invert_permutation(perm)),
            };
        }
        v
    }

    fn check_inputs(v: &Matrix, rx: &[f64], ry: &[f64]) -> Result<()> {
        if v.cols() != DIM || rx.len() != DIM_X || ry.len() != DIM_Y {
            return Err(Error::Shape(format!(
                "flow expects {DIM} columns and centroids of size {DIM_X}/{DIM_Y}, got {}/{}/{}",
                v.cols(),
                rx.len(),
                ry.len()
            )));
        }
        if !v.is_finite() || rx.iter().chain(ry).any(|c| !c.is_finite()) {
            return Err(Error::invalid("flow inputs must be finite"));
        }
        Ok(())
    }

    /// Forward map of the rows of `v` (`rows × DIM`).
    pub fn forward_full(&self, v: &Matrix, rx: &[f64], ry: &[f64]) -> Result<Matrix> {
        Ok(self.forward_traced(v, rx, ry)?.0)
    }

    /// Forward map plus every log-scale applied on the way.
    pub fn forward_traced(
        &self,
        v: &Matrix,
        rx: &[f64],
        ry: &[f64],
    ) -> Result<(Matrix, Vec<Matrix>)> {
        Self::check_inputs(v, rx, ry)?;
        let mut tape = Tape::new(&self.params);
        let vin = tape.constant(v.clone());
        let rxv = tape.constant(Matrix::row_vector(rx));
        let ryv = tape.constant(Matrix::row_vector(ry));
        let mut scales = Vec::new();
        let out = self.forward_on_tape(&mut tape, vin, rxv, ryv, Some(&mut scales));
        tape.check_finite()?;
        Ok((
            tape.value(out).clone(),
            scales.into_iter().map(|s| tape.value(s).clone()).collect(),
        ))
    }

    /// Inverse map of the rows of `w` (`rows × DIM`).
    pub fn inverse_full(&self, w: &Matrix, rx: &[f64], ry: &[f64]) -> Result<Matrix> {
        Self::check_inputs(w, rx, ry)?;
        let mut tape = Tape::new(&self.params);
        let win = tape.constant(w.clone());
        let rxv = tape.constant(Matrix::row_vector(rx));
        let ryv = tape.constant(Matrix::row_vector(ry));
        let out = self.inverse_on_tape(&mut tape, win, rxv, ryv);
        tape.check_finite()?;
        Ok(tape.value(out).clone())
    }

    /// `(ŷ, ẑ₂) = Φ(x, z₁, r_X, r_Y)` for a batch of rows.
    pub fn forward(
        &self,
        x: &Matrix,
        z1: &Matrix,
        rx: &[f64],
        ry: &[f64],
    ) -> Result<(Matrix, Matrix)> {
        if x.cols() != DIM_X || z1.cols() != DIM_Z1 || x.rows() != z1.rows() {
            return Err(Error::Shape("forward expects x: n×3 and z1: n×2".into()));
        }
        let out = self.forward_full(&x.hcat(z1), rx, ry)?;
        Ok((out.columns(0, DIM_Y), out.columns(DIM_Y, DIM_Z2)))
    }

    /// `(x̂, ẑ₁) = Φ⁻¹(y, z₂, r_X, r_Y)` for a batch of rows.
    pub fn inverse(
        &self,
        y: &Matrix,
        z2: &Matrix,
        rx: &[f64],
        ry: &[f64],
    ) -> Result<(Matrix, Matrix)> {
        if y.cols() != DIM_Y || z2.cols() != DIM_Z2 || y.rows() != z2.rows() {
            return Err(Error::Shape("inverse expects y: n×2 and z2: n×3".into()));
        }
        let out = self.inverse_full(&y.hcat(z2), rx, ry)?;
        Ok((out.columns(0, DIM_X), out.columns(DIM_X, DIM_Z1)))
    }

    /// Parameters of the conditional affine subnets.
    pub fn conditional_params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::CondAffine { subnet, .. } => Some(subnet.params().collect::<Vec<_>>()),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

/// Uniform distribution on a circle in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CirclePrior {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for CirclePrior {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }
}

impl CirclePrior {
    pub fn sample(&self, rng: &mut crate::Rng) -> [f64; 2] {
        let u = rng.random::<f64>() * TAU;
        [
            self.center[0] + self.radius * u.cos(),
            self.center[1] + self.radius * u.sin(),
        ]
    }
}

/// Which latent fiber a prior belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fiber {
    /// `Z₁ ⊂ ℝ²`, one prior per input cluster.
    Z1,
    /// `Z₂ ⊂ ℝ³`: a circle in the first two coordinates with the third pinned
    /// to zero, one prior per output cluster.
    Z2,
}

/// Per-cluster circle priors of both fibers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberPrior {
    pub z1: Vec<CirclePrior>,
    pub z2: Vec<CirclePrior>,
    pub momentum: f64,
}

impl FiberPrior {
    /// Unit circles at the origin for `n_x` input and `n_y` output clusters.
    pub fn new(n_x: usize, n_y: usize) -> Self {
        Self {
            z1: vec![CirclePrior::default(); n_x],
            z2: vec![CirclePrior::default(); n_y],
            momentum: 0.99,
        }
    }

    pub fn circle(&self, fiber: Fiber, index: usize) -> Result<&CirclePrior> {
        let table = match fiber {
            Fiber::Z1 => &self.z1,
            Fiber::Z2 => &self.z2,
        };
        table.get(index).ok_or_else(|| {
            Error::invalid(format!(
                "prior index {index} out of range ({} clusters)",
                table.len()
            ))
        })
    }

    /// One draw from the prior of `fiber` for cluster `index`.
    pub fn sample(&self, fiber: Fiber, index: usize, rng: &mut crate::Rng) -> Result<Vec<f64>> {
        let p = self.circle(fiber, index)?.sample(rng);
        Ok(match fiber {
            Fiber::Z1 => p.to_vec(),
            Fiber::Z2 => vec![p[0], p[1], 0.0],
        })
    }

    /// `n` draws stacked as rows.
    pub fn sample_matrix(
        &self,
        fiber: Fiber,
        index: usize,
        n: usize,
        rng: &mut crate::Rng,
    ) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| self.sample(fiber, index, rng))
            .collect::<Result<_>>()?;
        let cols = match fiber {
            Fiber::Z1 => DIM_Z1,
            Fiber::Z2 => DIM_Z2,
        };
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, cols));
        }
        Matrix::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_rows(rng: &mut crate::Rng, n: usize, d: usize, scale: f64) -> Matrix {
        Matrix::from_vec(
            n,
            d,
            (0..n * d)
                .map(|_| rng.random_range(-scale..=scale))
                .collect(),
        )
        .unwrap()
    }

    /// Gives every parameter a random value so no layer is the identity.
    pub(crate) fn randomize(net: &mut FlowNetwork, scale: f64, seed: u64) {
        let mut rng = crate::seeded_rng(seed, 99);
        let ids: Vec<_> = net.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for v in net.params.get_mut(id).data_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
    }

    #[test]
    fn fresh_network_is_a_permutation() {
        let net = FlowNetwork::new(&FlowConfig::default()).unwrap();
        let perm = net.composed_permutation();
        let mut rng = crate::seeded_rng(1, 0);
        let v = random_rows(&mut rng, 50, DIM, 10.0);
        let out = net
            .forward_full(&v, &[0.3, -1.0, 0.2], &[0.5, 0.5])
            .unwrap();
        assert!(out.max_abs_diff(&v.permute_columns(&perm)) <= 1e-12);
        let back = net
            .inverse_full(&out, &[0.3, -1.0, 0.2], &[0.5, 0.5])
            .unwrap();
        assert!(back.max_abs_diff(&v) <= 1e-12);
    }

    #[test]
    fn identity_forward_rearranges_the_input() {
        let net = FlowNetwork::new(&FlowConfig::default()).unwrap();
        let perm = net.composed_permutation();
        let v = [1.25, 0.0, 0.0, 1.0, 0.0];
        let x = Matrix::row_vector(&v[..3]);
        let z1 = Matrix::row_vector(&v[3..]);
        let (y, z2) = net.forward(&x, &z1, &[1.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        let expected: Vec<f64> = perm.iter().map(|&p| v[p]).collect();
        assert_eq!(y.data(), &expected[..2]);
        assert_eq!(z2.data(), &expected[2..]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = FlowNetwork::new(&FlowConfig::default()).unwrap();
        let b = FlowNetwork::new(&FlowConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = FlowNetwork::new(&FlowConfig {
            seed: 5,
            ..FlowConfig::default()
        })
        .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn no_blocks_leaves_two_conditional_affines() {
        let net = FlowNetwork::new(&FlowConfig {
            blocks: 0,
            ..FlowConfig::default()
        })
        .unwrap();
        assert_eq!(net.layers.len(), 2);
        assert_eq!(net.composed_permutation(), vec![0, 1, 2, 3, 4]);
        let v = Matrix::row_vector(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(net.forward_full(&v, &[0.0; 3], &[0.0; 2]).unwrap(), v);
    }

    #[test]
    fn random_network_round_trips() {
        let mut net = FlowNetwork::new(&FlowConfig::default()).unwrap();
        randomize(&mut net, 0.3, 4);
        let mut rng = crate::seeded_rng(2, 0);
        let v = random_rows(&mut rng, 1000, DIM, 10.0);
        for k in 0..5 {
            let rx = random_rows(&mut rng, 1, DIM_X, 10.0);
            let ry = random_rows(&mut rng, 1, DIM_Y, 10.0);
            let out = net.forward_full(&v, rx.data(), ry.data()).unwrap();
            let back = net.inverse_full(&out, rx.data(), ry.data()).unwrap();
            assert!(back.max_abs_diff(&v) <= 1e-6, "trial {k}");
        }
    }

    #[test]
    fn log_scales_respect_the_clamp() {
        let mut net = FlowNetwork::new(&FlowConfig::default()).unwrap();
        randomize(&mut net, 50.0, 8);
        let mut rng = crate::seeded_rng(3, 0);
        let v = random_rows(&mut rng, 20, DIM, 1.0);
        let (_, scales) = net
            .forward_traced(&v, &[1.0, 2.0, 3.0], &[-1.0, 0.5])
            .unwrap();
        assert_eq!(scales.len(), 2 + net.config.blocks);
        let smax = net.config.scale_clamp;
        let mut saturated = false;
        for s in &scales {
            for &x in s.data() {
                assert!(x.abs() <= smax);
                saturated |= x.abs() > 0.9 * smax;
            }
        }
        assert!(
            saturated,
            "large weights should push scales toward the bound"
        );
    }

    #[test]
    fn conditions_act_only_through_conditional_affines() {
        let mut net = FlowNetwork::new(&FlowConfig::default()).unwrap();
        randomize(&mut net, 0.3, 6);
        let mut rng = crate::seeded_rng(4, 0);
        let v = random_rows(&mut rng, 10, DIM, 2.0);
        let a = net.forward_full(&v, &[1.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        let b = net.forward_full(&v, &[0.0, 1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-3);

        for id in net.conditional_params() {
            net.params.get_mut(id).data_mut().fill(0.0);
        }
        let a = net.forward_full(&v, &[1.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        let b = net.forward_full(&v, &[0.0, 1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let net = FlowNetwork::new(&FlowConfig::default()).unwrap();
        let v = Matrix::row_vector(&[f64::NAN, 0.0, 0.0, 0.0, 0.0]);
        assert!(net.forward_full(&v, &[0.0; 3], &[0.0; 2]).is_err());
        let v = Matrix::row_vector(&[0.0; 4]);
        assert!(net.forward_full(&v, &[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn prior_samples_lie_on_the_circle() {
        let prior = FiberPrior::new(2, 3);
        let mut rng = crate::seeded_rng(7, 0);
        for _ in 0..100 {
            let z = prior.sample(Fiber::Z1, 1, &mut rng).unwrap();
            assert!((z[0].hypot(z[1]) - 1.0).abs() < 1e-15);
            let z = prior.sample(Fiber::Z2, 2, &mut rng).unwrap();
            assert!((z[0].hypot(z[1]) - 1.0).abs() < 1e-15);
            assert_eq!(z[2], 0.0);
        }
        assert!(prior.sample(Fiber::Z2, 3, &mut rng).is_err());
    }

    #[test]
    fn prior_mean_is_the_center() {
        let mut prior = FiberPrior::new(1, 1);
        prior.z1[0] = CirclePrior {
            center: [0.5, -2.0],
            radius: 0.7,
        };
        let mut rng = crate::seeded_rng(8, 0);
        let m = prior.sample_matrix(Fiber::Z1, 0, 10_000, &mut rng).unwrap();
        let mean0 = m.columns(0, 1).data().iter().sum::<f64>() / 10_000.0;
        let mean1 = m.columns(1, 1).data().iter().sum::<f64>() / 10_000.0;
        assert!((mean0 - 0.5).abs() < 0.05 && (mean1 + 2.0).abs() < 0.05);

        let mut a = crate::seeded_rng(8, 0);
        let mut b = crate::seeded_rng(8, 0);
        assert_eq!(
            prior.sample(Fiber::Z1, 0, &mut a).unwrap(),
            prior.sample(Fiber::Z1, 0, &mut b).unwrap()
        );
    }
}
