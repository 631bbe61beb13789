//! File formats: point CSVs, loss logs, checkpoints and metric reports.
//!
//! Floating-point values are written with 17 significant digits so that every
//! `f64` survives a write/read cycle unchanged. Every file is written to a
//! temporary sibling first and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::clustering::ClusterModel;
use crate::config::RunConfig;
use crate::datasets::{Dataset, PairedSample, Side};
use crate::error::{Error, Result};
use crate::flow::{CirclePrior, FiberPrior, FlowNetwork, Layer, Subnet};
use crate::metrics::MetricReport;
use crate::training::{LossRecord, TrainedModel};

pub const DATASET_HEADER: [&str; 5] = ["x0", "x1", "x2", "y0", "y1"];
pub const LOSS_LOG_HEADER: &str = "epoch,cell_i,cell_j,loss_forward,loss_reverse,reg";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `value` with 17 significant digits.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn read_file(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read {what} {}: {e}", path.display()),
        ))
    })
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(format_f64).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn dataset_csv(dataset: &Dataset) -> String {
    csv_text(
        &DATASET_HEADER,
        dataset
            .pairs
            .iter()
            .map(|p| p.x.iter().chain(&p.y).copied().collect()),
    )
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_atomic(path, dataset_csv(dataset).as_bytes())
}

/// Parses a dataset CSV; every value must be finite.
pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let what = "dataset CSV";
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::format(what, e))?;
    if header.iter().ne(DATASET_HEADER) {
        return Err(Error::format(
            what,
            format!("header must be {}", DATASET_HEADER.join(",")),
        ));
    }
    let mut pairs = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(what, e))?;
        let mut v = [0.0; 5];
        for (k, cell) in record.iter().enumerate() {
            let parsed: f64 = cell.trim().parse().map_err(|_| {
                Error::format(
                    what,
                    format!(
                        "row {}: column {} is not a number",
                        line + 1,
                        DATASET_HEADER[k]
                    ),
                )
            })?;
            if !parsed.is_finite() {
                return Err(Error::format(
                    what,
                    format!(
                        "row {}: column {} is not finite",
                        line + 1,
                        DATASET_HEADER[k]
                    ),
                ));
            }
            v[k] = parsed;
        }
        pairs.push(PairedSample {
            x: [v[0], v[1], v[2]],
            y: [v[3], v[4]],
        });
    }
    if pairs.is_empty() {
        return Err(Error::format(what, "no rows"));
    }
    Ok(Dataset {
        origin: None,
        pairs,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_file(path, "dataset")?)
}

/// Sample CSV with the coordinate header of `side`.
pub fn samples_csv(side: Side, samples: &[Vec<f64>]) -> String {
    let header: &[&str] = match side {
        Side::X => &DATASET_HEADER[..3],
        Side::Y => &DATASET_HEADER[3..],
    };
    csv_text(header, samples.iter().cloned())
}

pub fn write_samples(path: &Path, side: Side, samples: &[Vec<f64>]) -> Result<()> {
    write_atomic(path, samples_csv(side, samples).as_bytes())
}

pub fn loss_log_text(records: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.cell_i,
            r.cell_j,
            format_f64(r.forward),
            format_f64(r.reverse),
            format_f64(r.reg)
        )
        .expect("writing to a string");
    }
    out
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    write_atomic(path, loss_log_text(records).as_bytes())
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut text = report.to_json();
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A float serialized with 17 significant digits.
#[derive(Clone, Copy, Debug, PartialEq)]
struct F17(f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom("non-finite value in checkpoint"));
        }
        RawValue::from_string(format_f64(self.0))
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(F17)
    }
}

fn f17s(v: &[f64]) -> Vec<F17> {
    v.iter().map(|&x| F17(x)).collect()
}

fn plain(v: &[F17]) -> Vec<f64> {
    v.iter().map(|x| x.0).collect()
}

/// Where the training pairs of a checkpoint live and what they hash to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSetRef {
    pub path: PathBuf,
    pub sha256: String,
    pub pairs: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CirclePriorFile {
    center: [F17; 2],
    radius: F17,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorsFile {
    momentum: F17,
    z1: Vec<CirclePriorFile>,
    z2: Vec<CirclePriorFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClustersFile {
    centroids_x: Vec<Vec<F17>>,
    centroids_y: Vec<Vec<F17>>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerFile {
    CondAffine {
        condition: String,
        params: Vec<String>,
    },
    Coupling {
        params: Vec<String>,
    },
    Permutation {
        perm: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    name: String,
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<F17>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    layers: Vec<LayerFile>,
    params: Vec<ParamFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    config: RunConfig,
    training_set: TrainingSetRef,
    clusters: ClustersFile,
    priors: PriorsFile,
    network: NetworkFile,
}

fn circle_file(c: &CirclePrior) -> CirclePriorFile {
    CirclePriorFile {
        center: [F17(c.center[0]), F17(c.center[1])],
        radius: F17(c.radius),
    }
}

fn circle(c: &CirclePriorFile) -> CirclePrior {
    CirclePrior {
        center: [c.center[0].0, c.center[1].0],
        radius: c.radius.0,
    }
}

fn layer_files(network: &FlowNetwork) -> Vec<LayerFile> {
    let names = |subnet: &Subnet| {
        subnet
            .params()
            .map(|id| network.params.name(id).to_string())
            .collect()
    };
    network
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::CondAffine { condition, subnet } => LayerFile::CondAffine {
                condition: match condition {
                    Side::X => "x".into(),
                    Side::Y => "y".into(),
                },
                params: names(subnet),
            },
            Layer::Coupling { subnet } => LayerFile::Coupling {
                params: names(subnet),
            },
            Layer::Permutation { perm } => LayerFile::Permutation { perm: perm.clone() },
        })
        .collect()
}

/// Checkpoint JSON of `model`.
pub fn checkpoint_json(model: &TrainedModel, training_set: &TrainingSetRef) -> Result<String> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        training_set: training_set.clone(),
        clusters: ClustersFile {
            centroids_x: model.clusters.centroids_x.iter().map(|c| f17s(c)).collect(),
            centroids_y: model.clusters.centroids_y.iter().map(|c| f17s(c)).collect(),
        },
        priors: PriorsFile {
            momentum: F17(model.priors.momentum),
            z1: model.priors.z1.iter().map(circle_file).collect(),
            z2: model.priors.z2.iter().map(circle_file).collect(),
        },
        network: NetworkFile {
            layers: layer_files(&model.network),
            params: model
                .network
                .params
                .iter()
                .map(|(_, name, m)| ParamFile {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: f17s(m.data()),
                })
                .collect(),
        },
    };
    let mut text =
        serde_json::to_string_pretty(&file).map_err(|e| Error::format("checkpoint", e))?;
    text.push('\n');
    Ok(text)
}

pub fn save_checkpoint(
    path: &Path,
    model: &TrainedModel,
    training_set: &TrainingSetRef,
) -> Result<()> {
    write_atomic(path, checkpoint_json(model, training_set)?.as_bytes())
}

fn mismatch(field: impl std::fmt::Display, detail: impl std::fmt::Display) -> Error {
    Error::Mismatch(format!("checkpoint field {field}: {detail}"))
}

fn centroids(rows: &[Vec<F17>], dim: usize, field: &str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(k, c)| {
            if c.len() != dim {
                return Err(mismatch(
                    format!("{field}[{k}]"),
                    format!("expected {dim} coordinates, found {}", c.len()),
                ));
            }
            Ok(plain(c))
        })
        .collect()
}

/// Rebuilds the model stored in `text` around the given training pairs.
///
/// The pairs are not part of the checkpoint; `dataset` must be the file the
/// checkpoint's hash was computed from.
pub fn parse_checkpoint(text: &str, dataset: Dataset) -> Result<(TrainedModel, TrainingSetRef)> {
    let version: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e))?;
    match version.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(mismatch(
                "format_version",
                format!("unsupported version {v}, expected {CHECKPOINT_VERSION}"),
            ))
        }
        None => return Err(Error::format("checkpoint", "missing field format_version")),
    }
    let file: CheckpointFile =
        serde_json::from_value(version).map_err(|e| Error::format("checkpoint", e))?;
    file.config.validate()?;

    let mut network = FlowNetwork::new(&file.config.flow)?;
    let expected = layer_files(&network);
    if expected.len() != file.network.layers.len() {
        return Err(mismatch(
            "network.layers",
            format!(
                "config describes {} layers, checkpoint has {}",
                expected.len(),
                file.network.layers.len()
            ),
        ));
    }
    for (k, (want, got)) in expected.iter().zip(&file.network.layers).enumerate() {
        if want != got {
            return Err(mismatch(
                format!("network.layers[{k}]"),
                "does not match the architecture in config.flow",
            ));
        }
    }
    if network.params.len() != file.network.params.len() {
        return Err(mismatch(
            "network.params",
            format!(
                "expected {} tensors, found {}",
                network.params.len(),
                file.network.params.len()
            ),
        ));
    }
    let ids: Vec<_> = network.params.iter().map(|(id, _, _)| id).collect();
    for (id, p) in ids.into_iter().zip(&file.network.params) {
        let field = format!("network.params.{}", p.name);
        if network.params.name(id) != p.name {
            return Err(mismatch(
                field,
                format!("expected tensor {}", network.params.name(id)),
            ));
        }
        let target = network.params.get_mut(id);
        if (target.rows(), target.cols()) != (p.rows, p.cols) || p.data.len() != p.rows * p.cols {
            return Err(mismatch(
                field,
                format!(
                    "expected shape {}x{}, found {}x{} with {} values",
                    target.rows(),
                    target.cols(),
                    p.rows,
                    p.cols,
                    p.data.len()
                ),
            ));
        }
        target.data_mut().copy_from_slice(&plain(&p.data));
    }

    let clusters = ClusterModel {
        centroids_x: centroids(&file.clusters.centroids_x, 3, "clusters.centroids_x")?,
        centroids_y: centroids(&file.clusters.centroids_y, 2, "clusters.centroids_y")?,
    };
    let priors = FiberPrior {
        z1: file.priors.z1.iter().map(circle).collect(),
        z2: file.priors.z2.iter().map(circle).collect(),
        momentum: file.priors.momentum.0,
    };
    if dataset.len() != file.training_set.pairs {
        return Err(mismatch(
            "training_set.pairs",
            format!(
                "checkpoint expects {}, data has {}",
                file.training_set.pairs,
                dataset.len()
            ),
        ));
    }
    let model = TrainedModel {
        network,
        clusters,
        priors,
        dataset,
        config: file.config,
    };
    model.validate()?;
    Ok((model, file.training_set))
}

/// Loads a checkpoint and the training set it references.
///
/// `data` overrides the stored training-set path; either way the file's hash
/// must match the one recorded at training time.
pub fn load_checkpoint(path: &Path, data: Option<&Path>) -> Result<(TrainedModel, TrainingSetRef)> {
    let bytes = read_file(path, "checkpoint")?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format("checkpoint", e))?;
    let stored: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e))?;
    let stored_path = stored
        .pointer("/training_set/path")
        .and_then(|v| v.as_str())
        .map(PathBuf::from)
        .ok_or_else(|| Error::format("checkpoint", "missing field training_set.path"))?;
    let stored_hash = stored
        .pointer("/training_set/sha256")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    let data_path = data.map(Path::to_path_buf).unwrap_or(stored_path);
    let data_bytes = read_file(&data_path, "training set")?;
    let hash = sha256_hex(&data_bytes);
    if hash != stored_hash {
        return Err(mismatch(
            "training_set.sha256",
            format!(
                "{} hashes to {hash}, checkpoint expects {stored_hash}",
                data_path.display()
            ),
        ));
    }
    parse_checkpoint(text, parse_dataset(&data_bytes)?)
}
