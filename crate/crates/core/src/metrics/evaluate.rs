use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::divergence::{knn_kl, mmd, msmd};
use super::wasserstein::{wasserstein_with_mode, WassersteinMode};
use crate::datasets::{conditional_oracle, sample_pair, DatasetId, Direction};
use crate::error::{Error, Result};
use crate::inference::ConditionalSampler;

/// Metric keys in report order.
pub const METRIC_NAMES: [&str; 6] = ["w1", "w2", "msmd", "mmd", "kl_fwd", "kl_bwd"];

/// Sample counts and seed of an evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    /// Generated and true points compared at the global level.
    pub global_samples: usize,
    /// Anchors of the local level.
    pub local_anchors: usize,
    /// Generated and true points per local anchor.
    pub local_samples: usize,
    /// Neighbor rank of the KL estimator.
    pub kl_k: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            global_samples: 5000,
            local_anchors: 15,
            local_samples: 200,
            kl_k: 5,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.local_anchors == 0 {
            return Err(Error::invalid("protocol.local_anchors must be positive"));
        }
        if self.kl_k == 0 || self.kl_k >= self.local_samples || self.kl_k >= self.global_samples {
            return Err(Error::invalid(
                "protocol.kl_k must be positive and below both sample counts",
            ));
        }
        Ok(())
    }
}

/// The six metrics comparing a generated set against a true one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricValues {
    pub w1: f64,
    pub w2: f64,
    pub msmd: f64,
    pub mmd: f64,
    /// `KL(generated ‖ true)`.
    pub kl_fwd: f64,
    /// `KL(true ‖ generated)`.
    pub kl_bwd: f64,
}

impl MetricValues {
    pub fn compute(
        generated: &[Vec<f64>],
        truth: &[Vec<f64>],
        kl_k: usize,
    ) -> Result<(Self, WassersteinMode)> {
        let (w1, mode) = wasserstein_with_mode(generated, truth, 1)?;
        let (w2, _) = wasserstein_with_mode(generated, truth, 2)?;
        let values = Self {
            w1,
            w2,
            msmd: msmd(generated, truth)?,
            mmd: mmd(generated, truth)?,
            kl_fwd: knn_kl(generated, truth, kl_k)?,
            kl_bwd: knn_kl(truth, generated, kl_k)?,
        };
        if values.as_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: 0,
                op: "metric evaluation",
            });
        }
        Ok((values, mode))
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.w1,
            self.w2,
            self.msmd,
            self.mmd,
            self.kl_fwd,
            self.kl_bwd,
        ]
    }

    fn from_array(v: [f64; 6]) -> Self {
        Self {
            w1: v[0],
            w2: v[1],
            msmd: v[2],
            mmd: v[3],
            kl_fwd: v[4],
            kl_bwd: v[5],
        }
    }

    /// Arithmetic mean, entry by entry.
    pub fn mean(values: &[MetricValues]) -> Self {
        let mut acc = [0.0; 6];
        for v in values {
            for (a, x) in acc.iter_mut().zip(v.as_array()) {
                *a += x;
            }
        }
        Self::from_array(acc.map(|a| a / values.len() as f64))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        METRIC_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|k| self.as_array()[k])
    }
}

/// Per-anchor metrics and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMetrics {
    pub anchors: Vec<Vec<f64>>,
    pub per_anchor: Vec<MetricValues>,
    pub mean: MetricValues,
}

/// Both evaluation levels of one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionMetrics {
    pub global: MetricValues,
    pub global_mode: WassersteinMode,
    pub local: LocalMetrics,
    pub local_mode: WassersteinMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub dataset: DatasetId,
    pub protocol: EvalProtocol,
    pub forward: DirectionMetrics,
    pub reverse: DirectionMetrics,
}

impl MetricReport {
    pub fn direction(&self, direction: Direction) -> &DirectionMetrics {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Reverse => &self.reverse,
        }
    }

    /// Value stored under `{direction}.{level}.{metric}`, e.g. `forward.global.w1`.
    pub fn value(&self, key: &str) -> Option<f64> {
        let mut parts = key.split('.');
        let dir = match parts.next()? {
            "forward" => &self.forward,
            "reverse" => &self.reverse,
            _ => return None,
        };
        let values = match parts.next()? {
            "global" => &dir.global,
            "local" => &dir.local.mean,
            _ => return None,
        };
        let v = values.get(parts.next()?)?;
        parts.next().is_none().then_some(v)
    }

    /// The flat `{direction}.{level}.{metric}` keys of every metric slot.
    pub fn metric_keys() -> Vec<String> {
        let mut keys = Vec::with_capacity(24);
        for dir in ["forward", "reverse"] {
            for level in ["global", "local"] {
                for m in METRIC_NAMES {
                    keys.push(format!("{dir}.{level}.{m}"));
                }
            }
        }
        keys
    }

    pub fn to_json_value(&self) -> Value {
        let mut root = Map::new();
        for key in Self::metric_keys() {
            root.insert(key.clone(), json!(self.value(&key).expect("known key")));
        }
        for (name, dir) in [("forward", &self.forward), ("reverse", &self.reverse)] {
            let anchors: Vec<Value> = dir
                .local
                .anchors
                .iter()
                .zip(&dir.local.per_anchor)
                .map(|(a, v)| {
                    let mut entry = serde_json::to_value(v).expect("metrics serialize");
                    entry["anchor"] = json!(a);
                    entry
                })
                .collect();
            root.insert(format!("{name}.local.per_anchor"), Value::Array(anchors));
        }
        root.insert(
            "meta".into(),
            json!({
                "dataset": self.dataset.name(),
                "global_samples": self.protocol.global_samples,
                "local_anchors": self.protocol.local_anchors,
                "local_samples": self.protocol.local_samples,
                "kl_k": self.protocol.kl_k,
                "seed": self.protocol.seed,
                "wasserstein_global": self.forward.global_mode.name(),
                "wasserstein_local": self.forward.local_mode.name(),
                "local_aggregation": "mean over anchors",
                "kl_convention": "kl_fwd = KL(generated || true), kl_bwd = KL(true || generated)",
                "scaling": "values are unscaled",
            }),
        );
        Value::Object(root)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes")
    }
}

/// Generated and true samples at one local anchor, for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSamples {
    pub direction: Direction,
    pub index: usize,
    pub anchor: Vec<f64>,
    pub generated: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub samples: Vec<AnchorSamples>,
}

fn split(
    id: DatasetId,
    direction: Direction,
    n: usize,
    rng: &mut crate::Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let pairs: Vec<_> = (0..n).map(|_| sample_pair(id, rng)).collect();
    let xs = pairs.iter().map(|p| p.x.to_vec()).collect();
    let ys = pairs.iter().map(|p| p.y.to_vec()).collect();
    match direction {
        Direction::Forward => (xs, ys),
        Direction::Reverse => (ys, xs),
    }
}

fn evaluate_direction(
    sampler: &impl ConditionalSampler,
    id: DatasetId,
    direction: Direction,
    protocol: &EvalProtocol,
    samples: &mut Vec<AnchorSamples>,
) -> Result<DirectionMetrics> {
    let base = match direction {
        Direction::Forward => 60,
        Direction::Reverse => 70,
    };
    let stream = |k: u64| crate::seeded_rng(protocol.seed, base + k);

    // Global: one generated point per fresh anchor against fresh true points.
    let (anchors, _) = split(id, direction, protocol.global_samples, &mut stream(0));
    let (_, truth) = split(id, direction, protocol.global_samples, &mut stream(1));
    let mut model_rng = stream(2);
    let mut generated = Vec::with_capacity(anchors.len());
    for a in &anchors {
        let mut s = sampler.sample(direction, a, 1, &mut model_rng)?;
        generated.push(
            s.pop()
                .ok_or_else(|| Error::invalid("sampler returned no points"))?,
        );
    }
    let (global, global_mode) = MetricValues::compute(&generated, &truth, protocol.kl_k)?;

    // Local: many generated points per anchor against the exact conditional law.
    let (local_anchors, _) = split(id, direction, protocol.local_anchors, &mut stream(3));
    let mut oracle_rng = stream(4);
    let mut per_anchor = Vec::with_capacity(local_anchors.len());
    let mut local_mode = WassersteinMode::Exact;
    for (index, a) in local_anchors.iter().enumerate() {
        let generated = sampler.sample(direction, a, protocol.local_samples, &mut model_rng)?;
        let truth = conditional_oracle(id, direction, a, protocol.local_samples, &mut oracle_rng)?;
        let (values, mode) = MetricValues::compute(&generated, &truth, protocol.kl_k)?;
        local_mode = mode;
        per_anchor.push(values);
        samples.push(AnchorSamples {
            direction,
            index,
            anchor: a.clone(),
            generated,
            truth,
        });
    }
    Ok(DirectionMetrics {
        global,
        global_mode,
        local: LocalMetrics {
            mean: MetricValues::mean(&per_anchor),
            anchors: local_anchors,
            per_anchor,
        },
        local_mode,
    })
}

/// Runs the global and local protocol in both directions.
pub fn evaluate(
    sampler: &impl ConditionalSampler,
    id: DatasetId,
    protocol: &EvalProtocol,
) -> Result<Evaluation> {
    protocol.validate()?;
    let mut samples = Vec::new();
    let forward = evaluate_direction(sampler, id, Direction::Forward, protocol, &mut samples)?;
    let reverse = evaluate_direction(sampler, id, Direction::Reverse, protocol, &mut samples)?;
    Ok(Evaluation {
        report: MetricReport {
            dataset: id,
            protocol: protocol.clone(),
            forward,
            reverse,
        },
        samples,
    })
}
