//! Phase I: train with plain ERM, record the misclassified set per epoch,
//! and pick the identification epoch whose error set becomes the buffer for
//! phase II.
//!
//! Epoch selection is either a fixed epoch from the config or, when an
//! annotated validation set is available, an exhaustive probe over a small
//! epoch grid: the caller supplies a closure that trains a phase-II model on
//! a candidate buffer and returns its validation worst-group accuracy, and
//! the epoch with the best probe score wins (ties to the smallest epoch).
//! The phase-I model itself is discarded afterwards.

use std::io::{BufRead, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::public_val_metrics;
use crate::nn::{Activation, LayerSpec, Mlp};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferSource {
    Identified,
    Oracle,
}

impl BufferSource {
    pub fn as_str(self) -> &'static str {
        match self {
            BufferSource::Identified => "identified",
            BufferSource::Oracle => "oracle",
        }
    }
}

/// The inferred minority partition: train indices misclassified at the
/// identification epoch (or supplied by an oracle mask).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorBuffer {
    /// Sorted train-sample indices.
    pub indices: Vec<usize>,
    /// Identification epoch; absent for oracle buffers.
    pub epoch_t: Option<usize>,
    pub source: BufferSource,
}

impl ErrorBuffer {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.indices {
            mask[i] = true;
        }
        mask
    }

    /// Text format: a header with the epoch and source, then one index per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "epoch_t={} source={}\n",
            self.epoch_t.map_or("none".to_string(), |t| t.to_string()),
            self.source.as_str()
        );
        for &i in &self.indices {
            out.push_str(&format!("{i}\n"));
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let mut epoch_t = None;
        let mut source = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("epoch_t", "none")) => {}
                Some(("epoch_t", v)) => {
                    epoch_t = Some(v.parse().map_err(|_| {
                        Error::format(path, format!("bad epoch_t value {v:?}"))
                    })?);
                }
                Some(("source", "identified")) => source = Some(BufferSource::Identified),
                Some(("source", "oracle")) => source = Some(BufferSource::Oracle),
                _ => return Err(Error::format(path, format!("bad header field {field:?}"))),
            }
        }
        let source = source.ok_or_else(|| Error::format(path, "missing source field"))?;
        let mut indices = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            indices.push(line.trim().parse().map_err(|_| {
                Error::format(path, format!("bad index line {line:?}"))
            })?);
        }
        if indices.is_empty() {
            return Err(Error::EmptyBuffer(format!("{} holds no indices", path.display())));
        }
        Ok(Self {
            indices,
            epoch_t,
            source,
        })
    }
}

/// How well the buffer recovered the true minority partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationQuality {
    /// Buffer samples that are true minority.
    pub spurious_detected: usize,
    /// Buffer samples that are not minority.
    pub not_spurious_detected: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Identification-epoch selection strategy.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TSelection {
    /// Use the misclassified set of this epoch (1-based).
    Fixed(usize),
    /// Probe each candidate epoch with a downstream phase-II run scored by
    /// validation worst-group accuracy; best score wins, ties to smallest.
    ProbeGrid(Vec<usize>),
}

impl TSelection {
    pub fn default_grid() -> Self {
        TSelection::ProbeGrid(vec![1, 2, 5, 10, 20])
    }
}

#[derive(Debug, Clone)]
pub struct IdentifyConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub t_selection: TSelection,
}

/// One row of the identification history.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_error_count: usize,
    pub val_worst_group_acc: Option<f64>,
}

/// Save the identification history as `epoch,train_error_count,val_worst_group_acc`.
pub fn save_identification_history(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_error_count,val_worst_group_acc\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            r.train_error_count,
            r.val_worst_group_acc
                .map_or(String::new(), crate::textfmt::fmt6)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Downstream scoring for probe-based epoch selection.
pub type ProbeFn<'a> = dyn Fn(&ErrorBuffer) -> Result<f64> + 'a;

fn phase1_arch(train: &Dataset, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut dims = vec![train.feature_dim()];
    dims.extend_from_slice(hidden);
    dims.push(train.n_classes());
    dims.windows(2)
        .enumerate()
        .map(|(k, w)| {
            let activation = if k + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], activation)
        })
        .collect()
}

/// Train a fresh model with plain ERM and return, per epoch, the set of
/// misclassified train indices measured in one deterministic full pass.
fn record_error_sets(
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &IdentifyConfig,
) -> Result<(Vec<Vec<usize>>, Vec<EpochRecord>)> {
    let mut rng = stream(cfg.seed, "phase1-init", &[]);
    let mut model = Mlp::init(phase1_arch(train, &cfg.hidden), &mut rng)?;
    let n = train.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let all_inputs = train.gather_features(&indices);
    let all_targets = train.gather_onehot_targets(&indices);

    let mut error_sets = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut shuffle_rng = stream(cfg.seed, "phase1-shuffle", &[epoch as u64]);
        indices.shuffle(&mut shuffle_rng);
        for batch in indices.chunks(cfg.batch_size) {
            let inputs = train.gather_features(batch);
            let targets = train.gather_onehot_targets(batch);
            let weights = vec![1.0; batch.len()];
            let (_, grads) = model.loss_and_grads(&inputs, &targets, &weights, 0)?;
            model.sgd_step(&grads, cfg.lr, cfg.weight_decay)?;
        }

        let predictions = model.predict_classes(&all_inputs)?;
        let misclassified: Vec<usize> = (0..n)
            .filter(|&i| predictions[i] != train.label(i))
            .collect();
        let val_worst = match val {
            Some(v) => public_val_metrics(&model, v)?.1,
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_error_count: misclassified.len(),
            val_worst_group_acc: val_worst,
        });
        error_sets.push(misclassified);
    }
    let _ = all_targets;
    Ok((error_sets, history))
}

/// Run phase I and select the identification epoch.
///
/// With `TSelection::Fixed(t)` the buffer is the misclassified set of epoch
/// `t`. With `TSelection::ProbeGrid` every candidate epoch's buffer is scored
/// by `probe` (which must train a phase-II model and report validation
/// worst-group accuracy); this path requires an annotated validation set.
pub fn run_identification(
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &IdentifyConfig,
    probe: Option<&ProbeFn>,
) -> Result<(ErrorBuffer, Vec<EpochRecord>)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config(
            "identification needs at least one epoch and a positive batch size".into(),
        ));
    }
    let (error_sets, history) = record_error_sets(train, val, cfg)?;

    let empty_message = "every train sample was classified correctly; the learner capacity \
                         outmatches the data, reduce epochs or enlarge the dataset";

    let buffer_at = |t: usize| -> Result<ErrorBuffer> {
        if t == 0 || t > cfg.epochs {
            return Err(Error::Config(format!(
                "identification epoch {t} outside 1..={}",
                cfg.epochs
            )));
        }
        let indices = error_sets[t - 1].clone();
        if indices.is_empty() {
            return Err(Error::EmptyBuffer(format!(
                "no misclassified samples at epoch {t}; {empty_message}"
            )));
        }
        Ok(ErrorBuffer {
            indices,
            epoch_t: Some(t),
            source: BufferSource::Identified,
        })
    };

    match &cfg.t_selection {
        TSelection::Fixed(t) => Ok((buffer_at(*t)?, history)),
        TSelection::ProbeGrid(grid) => {
            if val.is_none() {
                return Err(Error::Config(
                    "probe-based epoch selection needs an annotated validation set; \
                     configure a fixed identification epoch instead"
                        .into(),
                ));
            }
            let probe = probe.ok_or_else(|| {
                Error::Config("probe-based epoch selection needs a downstream probe".into())
            })?;
            let mut best: Option<(f64, usize, ErrorBuffer)> = None;
            for &t in grid {
                if t == 0 || t > cfg.epochs {
                    continue;
                }
                let candidate = match buffer_at(t) {
                    Ok(b) => b,
                    Err(Error::EmptyBuffer(_)) => continue,
                    Err(e) => return Err(e),
                };
                let score = probe(&candidate)?;
                let better = match &best {
                    None => true,
                    Some((s, _, _)) => score > *s,
                };
                if better {
                    best = Some((score, t, candidate));
                }
            }
            match best {
                Some((_, _, buffer)) => Ok((buffer, history)),
                None => Err(Error::EmptyBuffer(format!(
                    "no candidate epoch produced a non-empty buffer; {empty_message}"
                ))),
            }
        }
    }
}

/// Build a buffer directly from a minority mask instead of phase I.
pub fn buffer_from_oracle(mask: &[bool]) -> Result<ErrorBuffer> {
    let indices: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if indices.is_empty() {
        return Err(Error::EmptyBuffer(
            "oracle mask marks no minority samples".into(),
        ));
    }
    Ok(ErrorBuffer {
        indices,
        epoch_t: None,
        source: BufferSource::Oracle,
    })
}

/// Score a buffer against the true minority mask.
pub fn identification_quality(buffer: &ErrorBuffer, oracle_mask: &[bool]) -> IdentificationQuality {
    let mut s = 0usize;
    let mut ns = 0usize;
    for &i in &buffer.indices {
        if oracle_mask[i] {
            s += 1;
        } else {
            ns += 1;
        }
    }
    let total_minority = oracle_mask.iter().filter(|&&m| m).count();
    let precision = if s + ns > 0 {
        s as f64 / (s + ns) as f64
    } else {
        0.0
    };
    let recall = if total_minority > 0 {
        s as f64 / total_minority as f64
    } else {
        0.0
    };
    IdentificationQuality {
        spurious_detected: s,
        not_spurious_detected: ns,
        precision,
        recall,
    }
}
