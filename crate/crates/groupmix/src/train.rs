//! End-to-end training pipelines for every method and annotation regime.
//!
//! All pipelines share one SGD engine: shuffled minibatches, per-epoch
//! validation through the public (annotation-masked) view, and checkpoint
//! selection by the declared criterion. Two-phase methods obtain their
//! buffer from the oracle partition when the annotation level exposes it and
//! from phase-I identification otherwise; phase II always trains a fresh
//! model, never a continuation of the phase-I weights.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{AnnotationLevel, Dataset, GroupId, Partition};
use crate::error::{Error, Result};
use crate::eval::public_val_metrics;
use crate::identify::{
    buffer_from_oracle, run_identification, ErrorBuffer, IdentifyConfig, TSelection,
};
use crate::losses::{groupdro_update, groupjm1_weight, jtt_weights, per_group_losses, GroupWeights};
use crate::mix::{
    make_mixed_batch, make_worst_group_mixed_batch, sample_alpha, AlphaConvention, MixPolicy,
    MixedBatch, Pairing, PairingPools,
};
use crate::nn::{cross_entropy_rows, Activation, LayerSpec, Mlp};
use crate::rng::stream;
use crate::textfmt::fmt6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Mixup,
    Cmixup,
    Jtt,
    Jm1,
    Groupdro,
    Groupjm1,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Mixup => "mixup",
            Method::Cmixup => "cmixup",
            Method::Jtt => "jtt",
            Method::Jm1 => "jm1",
            Method::Groupdro => "groupdro",
            Method::Groupjm1 => "groupjm1",
        }
    }

    pub const ALL: [Method; 7] = [
        Method::Erm,
        Method::Mixup,
        Method::Cmixup,
        Method::Jtt,
        Method::Jm1,
        Method::Groupdro,
        Method::Groupjm1,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    ValAverage,
    ValWorstGroup,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub annotation_level: AnnotationLevel,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    /// Buffer upweighting factor (two-phase reweighting).
    pub lambda_up: f64,
    /// Step size of the exponentiated-gradient group-weight update.
    pub eta_q: f64,
    pub mix_policy: MixPolicy,
    pub seed: u64,
    /// Phase-I epochs for identification-based buffers.
    pub id_epochs: usize,
    /// Identification-epoch selection.
    pub t_selection: TSelection,
    /// Phase-II epochs used inside identification probes (defaults to `epochs`).
    pub probe_epochs: Option<usize>,
    /// Checkpoint criterion; `None` picks the per-method default.
    pub selection: Option<SelectionCriterion>,
}

impl TrainConfig {
    /// Desk-scale defaults; the mixing policy follows the method.
    pub fn new(method: Method, annotation_level: AnnotationLevel) -> Self {
        let mix_policy = match method {
            Method::Mixup => MixPolicy::unconditional_default(),
            Method::Cmixup => MixPolicy::random_group_default(),
            Method::Groupjm1 => MixPolicy {
                alpha_dist: crate::mix::AlphaDist::Uniform01,
                layer: crate::mix::MixLayer::Input,
                pairing: Pairing::CrossPartitionClassConditional,
                convention: AlphaConvention::MinorityWeight,
            },
            _ => MixPolicy::cross_partition_default(),
        };
        Self {
            method,
            annotation_level,
            epochs: 60,
            batch_size: 32,
            lr: 1e-2,
            weight_decay: 1e-3,
            hidden: vec![32, 32],
            lambda_up: 20.0,
            eta_q: 0.01,
            mix_policy,
            seed: 0,
            id_epochs: 60,
            t_selection: TSelection::default_grid(),
            probe_epochs: None,
            selection: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn arch(&self, feature_dim: usize, n_classes: usize) -> Vec<LayerSpec> {
        let mut dims = vec![feature_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(n_classes);
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

    fn identify_config(&self) -> IdentifyConfig {
        IdentifyConfig {
            epochs: self.id_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            hidden: self.hidden.clone(),
            seed: self.seed,
            t_selection: self.t_selection.clone(),
        }
    }

    /// Effective checkpoint criterion for this config.
    pub fn effective_selection(&self) -> SelectionCriterion {
        if let Some(s) = self.selection {
            return s;
        }
        match (self.method, self.annotation_level) {
            (Method::Jm1, AnnotationLevel::None) => SelectionCriterion::ValAverage,
            (Method::Erm | Method::Mixup, _) => SelectionCriterion::ValAverage,
            _ => SelectionCriterion::ValWorstGroup,
        }
    }

    /// Method/annotation compatibility and basic field sanity.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "lr and weight_decay must be nonnegative".into(),
            ));
        }
        if self.method == Method::Jtt && !(self.lambda_up >= 1.0) {
            return Err(Error::Config(format!(
                "lambda_up must be >= 1, got {}",
                self.lambda_up
            )));
        }
        let level = self.annotation_level;
        let ok = match self.method {
            Method::Groupdro | Method::Groupjm1 | Method::Cmixup => {
                level == AnnotationLevel::FineGrained
            }
            Method::Jtt => {
                level == AnnotationLevel::ValidationOnly || level == AnnotationLevel::Coarse
            }
            Method::Jm1 | Method::Erm | Method::Mixup => true,
        };
        if !ok {
            return Err(Error::Config(format!(
                "method {} is incompatible with annotation level {}",
                self.method.as_str(),
                level.as_str()
            )));
        }
        if level == AnnotationLevel::None {
            if self.effective_selection() == SelectionCriterion::ValWorstGroup {
                return Err(Error::Config(
                    "selection by validation worst-group accuracy needs group annotation; \
                     annotation level none permits val_average only"
                        .into(),
                ));
            }
            if self.method == Method::Jm1 && !matches!(self.t_selection, TSelection::Fixed(_)) {
                return Err(Error::Config(
                    "annotation level none has no annotated validation set: configure a \
                     fixed identification epoch (t_selection)"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// One row of the run history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_avg_acc: f64,
    pub val_worst_acc: Option<f64>,
    pub val_group_acc: Option<Vec<f64>>,
    /// Mean unmixed per-group train loss (group-aware methods only);
    /// NaN marks groups absent from every batch of the epoch.
    pub train_group_loss: Option<Vec<f64>>,
    /// End-of-epoch group weights (group-aware methods only).
    pub q: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferSummary {
    pub len: usize,
    pub epoch_t: Option<usize>,
    pub source: &'static str,
}

#[derive(Debug, Clone)]
pub struct RunHistory {
    pub epochs: Vec<EpochStats>,
    pub selected_epoch: usize,
    pub selection: SelectionCriterion,
    /// Human-readable note on how the raw mixing draw maps onto endpoint
    /// coefficients for this run.
    pub convention_note: Option<String>,
    pub buffer: Option<BufferSummary>,
}

impl RunHistory {
    /// Best value of the selection criterion over the run.
    pub fn selected_score(&self) -> f64 {
        let s = &self.epochs[self.selected_epoch - 1];
        match self.selection {
            SelectionCriterion::ValAverage => s.val_avg_acc,
            SelectionCriterion::ValWorstGroup => s.val_worst_acc.unwrap_or(f64::NAN),
        }
    }

    /// CSV persistence: `epoch,train_loss,val_avg,val_worst,acc_g_…,q_g_…`
    /// with empty fields where a quantity does not apply.
    pub fn save_csv(&self, groups: &[GroupId], path: &Path) -> Result<()> {
        let mut header = String::from("epoch,train_loss,val_avg,val_worst");
        for g in groups {
            header.push_str(&format!(",acc_g_{}_{}", g.c, g.y));
        }
        for g in groups {
            header.push_str(&format!(",q_g_{}_{}", g.c, g.y));
        }
        header.push('\n');
        let mut out = header;
        for s in &self.epochs {
            out.push_str(&format!("{},{}", s.epoch, fmt6(s.train_loss)));
            out.push_str(&format!(",{}", fmt6(s.val_avg_acc)));
            out.push_str(&format!(
                ",{}",
                s.val_worst_acc.map_or(String::new(), fmt6)
            ));
            for gi in 0..groups.len() {
                let cell = s
                    .val_group_acc
                    .as_ref()
                    .and_then(|v| v.get(gi))
                    .filter(|a| a.is_finite())
                    .map_or(String::new(), |a| fmt6(*a));
                out.push_str(&format!(",{cell}"));
            }
            for gi in 0..groups.len() {
                let cell = s
                    .q
                    .as_ref()
                    .and_then(|v| v.get(gi))
                    .map_or(String::new(), |a| fmt6(*a));
                out.push_str(&format!(",{cell}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Internal per-epoch engine state shared by every pipeline.
struct Engine<'a> {
    cfg: &'a TrainConfig,
    train: &'a Dataset,
    val: &'a Dataset,
    selection: SelectionCriterion,
    model: Mlp,
    best: Option<(f64, usize, Mlp)>,
    history: Vec<EpochStats>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a TrainConfig, train: &'a Dataset, val: &'a Dataset) -> Result<Self> {
        let mut rng = stream(cfg.seed, "phase2-init", &[]);
        let model = Mlp::init(cfg.arch(train.feature_dim(), train.n_classes()), &mut rng)?;
        Ok(Self {
            cfg,
            train,
            val,
            selection: cfg.effective_selection(),
            model,
            best: None,
            history: Vec::with_capacity(cfg.epochs),
        })
    }

    fn shuffled_indices(&self, epoch: usize) -> Vec<usize> {
        let mut indices: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = stream(self.cfg.seed, "phase2-shuffle", &[epoch as u64]);
        indices.shuffle(&mut rng);
        indices
    }

    /// Validation metrics, history row, and checkpoint tracking for one epoch.
    fn finish_epoch(
        &mut self,
        epoch: usize,
        train_loss: f64,
        train_group_loss: Option<Vec<f64>>,
        q: Option<Vec<f64>>,
    ) -> Result<()> {
        let (val_avg, val_worst, val_groups) = public_val_metrics(&self.model, self.val)?;
        let score = match self.selection {
            SelectionCriterion::ValAverage => val_avg,
            SelectionCriterion::ValWorstGroup => val_worst.ok_or_else(|| {
                Error::Config(
                    "selection by worst-group accuracy needs group labels on the validation split"
                        .into(),
                )
            })?,
        };
        let better = match &self.best {
            None => true,
            Some((s, _, _)) => score > *s,
        };
        if better {
            self.best = Some((score, epoch, self.model.clone()));
        }
        self.history.push(EpochStats {
            epoch,
            train_loss,
            val_avg_acc: val_avg,
            val_worst_acc: val_worst,
            val_group_acc: val_groups,
            train_group_loss,
            q,
        });
        Ok(())
    }

    fn into_result(
        self,
        convention_note: Option<String>,
        buffer: Option<BufferSummary>,
    ) -> (Mlp, RunHistory) {
        let (_, selected_epoch, model) = self.best.expect("at least one epoch ran");
        (
            model,
            RunHistory {
                epochs: self.history,
                selected_epoch,
                selection: self.selection,
                convention_note,
                buffer,
            },
        )
    }
}

fn buffer_summary(buffer: &ErrorBuffer) -> BufferSummary {
    BufferSummary {
        len: buffer.len(),
        epoch_t: buffer.epoch_t,
        source: buffer.source.as_str(),
    }
}

/// Minority mask from the public partition view (fine-grained or coarse).
fn public_minority_mask(train: &Dataset) -> Result<Vec<bool>> {
    (0..train.len())
        .map(|i| Ok(train.partition(i)? == Partition::Minority))
        .collect()
}

/// Obtain the phase-II buffer for the configured annotation level: the
/// oracle partition when it is exposed, phase-I identification otherwise.
/// The identification history (when phase I ran) comes back for persistence.
pub fn obtain_buffer(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(ErrorBuffer, Option<Vec<crate::identify::EpochRecord>>)> {
    match cfg.annotation_level {
        AnnotationLevel::FineGrained | AnnotationLevel::Coarse => {
            let buffer = buffer_from_oracle(&public_minority_mask(train)?)?;
            Ok((buffer, None))
        }
        AnnotationLevel::ValidationOnly => {
            let idcfg = cfg.identify_config();
            let needs_probe = matches!(idcfg.t_selection, TSelection::ProbeGrid(_));
            let (buffer, history) = if needs_probe {
                let probe_cfg = TrainConfig {
                    epochs: cfg.probe_epochs.unwrap_or(cfg.epochs),
                    selection: Some(SelectionCriterion::ValWorstGroup),
                    ..cfg.clone()
                };
                let probe = |candidate: &ErrorBuffer| -> Result<f64> {
                    let (_, history) = match cfg.method {
                        Method::Jtt => train_jtt_with_buffer(&probe_cfg, train, val, candidate)?,
                        _ => train_jm1_with_buffer(&probe_cfg, train, val, candidate)?,
                    };
                    Ok(history.selected_score())
                };
                run_identification(train, Some(val), &idcfg, Some(&probe))?
            } else {
                run_identification(train, Some(val), &idcfg, None)?
            };
            Ok((buffer, Some(history)))
        }
        AnnotationLevel::None => {
            let idcfg = cfg.identify_config();
            let (buffer, history) = run_identification(train, None, &idcfg, None)?;
            Ok((buffer, Some(history)))
        }
    }
}

/// Plain ERM.
pub fn train_erm(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<(Mlp, RunHistory)> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg, train, val)?;
    for epoch in 1..=cfg.epochs {
        let indices = engine.shuffled_indices(epoch);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let inputs = train.gather_features(batch);
            let targets = train.gather_onehot_targets(batch);
            let weights = vec![1.0; batch.len()];
            let (loss, grads) = engine.model.loss_and_grads(&inputs, &targets, &weights, 0)?;
            engine.model.sgd_step(&grads, cfg.lr, cfg.weight_decay)?;
            loss_sum += loss * batch.len() as f64;
        }
        engine.finish_epoch(epoch, loss_sum / train.len() as f64, None, None)?;
    }
    Ok(engine.into_result(None, None))
}

/// Phase II of the two-phase reweighting method with an explicit buffer:
/// fresh model, buffer samples upweighted by `lambda_up`.
pub fn train_jtt_with_buffer(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    buffer: &ErrorBuffer,
) -> Result<(Mlp, RunHistory)> {
    let mask = buffer.contains_mask(train.len());
    let mut engine = Engine::new(cfg, train, val)?;
    for epoch in 1..=cfg.epochs {
        let indices = engine.shuffled_indices(epoch);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let inputs = train.gather_features(batch);
            let targets = train.gather_onehot_targets(batch);
            let batch_mask: Vec<bool> = batch.iter().map(|&i| mask[i]).collect();
            let weights = jtt_weights(batch.len(), &batch_mask, cfg.lambda_up)?;
            let (loss, grads) = engine.model.loss_and_grads(&inputs, &targets, &weights, 0)?;
            engine.model.sgd_step(&grads, cfg.lr, cfg.weight_decay)?;
            loss_sum += loss * batch.len() as f64;
        }
        engine.finish_epoch(epoch, loss_sum / train.len() as f64, None, None)?;
    }
    Ok(engine.into_result(None, Some(buffer_summary(buffer))))
}

/// Two-phase buffer upweighting.
pub fn train_jtt(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<(Mlp, RunHistory)> {
    cfg.validate()?;
    let (buffer, _) = obtain_buffer(cfg, train, val)?;
    train_jtt_with_buffer(cfg, train, val, &buffer)
}

/// Loss and full-network gradients for a mixed batch: the suffix gradients
/// from the loss at the mixing layer, plus — for hidden-layer mixing — the
/// gradient flow through *both* interpolation endpoints' lower layers,
/// scaled by their interpolation coefficients.
pub fn mixed_batch_gradients(
    model: &Mlp,
    mixed: &MixedBatch,
    weights: &[f64],
) -> Result<(f64, crate::nn::Gradients)> {
    let (loss, mut grads, d_inputs) =
        model.loss_grads_input_grads(&mixed.inputs, &mixed.targets, weights, mixed.layer_k)?;
    if mixed.layer_k > 0 {
        let self_trace = mixed.self_trace.as_ref().expect("trace for hidden mixing");
        let partner_trace = mixed.partner_trace.as_ref().expect("trace for hidden mixing");
        let upstream_self: Vec<Vec<f64>> = d_inputs
            .iter()
            .zip(&mixed.self_coeff)
            .map(|(row, &w)| row.iter().map(|v| w * v).collect())
            .collect();
        let upstream_partner: Vec<Vec<f64>> = d_inputs
            .iter()
            .zip(&mixed.self_coeff)
            .map(|(row, &w)| row.iter().map(|v| (1.0 - w) * v).collect())
            .collect();
        model.backprop_representation(self_trace, mixed.layer_k, &upstream_self, &mut grads);
        model.backprop_representation(partner_trace, mixed.layer_k, &upstream_partner, &mut grads);
    }
    Ok((loss, grads))
}

fn step_on_mixed_batch(
    model: &mut Mlp,
    mixed: &MixedBatch,
    weights: &[f64],
    lr: f64,
    weight_decay: f64,
) -> Result<f64> {
    let (loss, grads) = mixed_batch_gradients(model, mixed, weights)?;
    model.sgd_step(&grads, lr, weight_decay)?;
    Ok(loss)
}

fn convention_note(policy: &MixPolicy) -> String {
    match policy.convention {
        AlphaConvention::MinorityWeight => {
            "draw -> minority endpoint coefficient (minority_weight = draw)".to_string()
        }
        AlphaConvention::MajorityWeight => {
            "draw -> majority endpoint coefficient (minority_weight = 1 - draw)".to_string()
        }
    }
}

/// Phase II of the interpolation method with an explicit buffer: every
/// batch is replaced by its mixed counterpart and trained with unweighted
/// cross-entropy.
pub fn train_jm1_with_buffer(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    buffer: &ErrorBuffer,
) -> Result<(Mlp, RunHistory)> {
    let pools = PairingPools::from_buffer(train, buffer)?;
    let policy = cfg.mix_policy;
    let mut engine = Engine::new(cfg, train, val)?;
    for epoch in 1..=cfg.epochs {
        let indices = engine.shuffled_indices(epoch);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let mut rng = stream(cfg.seed, "mix", &[epoch as u64, batch_idx as u64]);
            let draw = sample_alpha(
                &policy,
                epoch - 1,
                cfg.epochs,
                engine.model.num_layers(),
                &mut rng,
            )?;
            let mixed = make_mixed_batch(&engine.model, train, batch, &pools, &policy, &draw, &mut rng)?;
            let weights = vec![1.0; batch.len()];
            let loss = step_on_mixed_batch(
                &mut engine.model,
                &mixed,
                &weights,
                cfg.lr,
                cfg.weight_decay,
            )?;
            loss_sum += loss * batch.len() as f64;
        }
        engine.finish_epoch(epoch, loss_sum / train.len() as f64, None, None)?;
    }
    let note = convention_note(&policy);
    Ok(engine.into_result(Some(note), Some(buffer_summary(buffer))))
}

/// Two-phase class-conditional interpolation.
pub fn train_jm1(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<(Mlp, RunHistory)> {
    cfg.validate()?;
    let (buffer, _) = obtain_buffer(cfg, train, val)?;
    train_jm1_with_buffer(cfg, train, val, &buffer)
}

/// Unconditional MixUp and the class-conditional random-group baseline.
pub fn train_mixup_baselines(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(Mlp, RunHistory)> {
    cfg.validate()?;
    let policy = cfg.mix_policy;
    let pools = match policy.pairing {
        Pairing::Unconditional => PairingPools::none(train.n_classes()),
        Pairing::RandomGroupClassConditional => PairingPools::from_groups(train)?,
        Pairing::CrossPartitionClassConditional => {
            return Err(Error::Config(
                "mixup baselines pair unconditionally or by random group; \
                 cross-partition pairing is the two-phase method"
                    .into(),
            ))
        }
    };
    let mut engine = Engine::new(cfg, train, val)?;
    for epoch in 1..=cfg.epochs {
        let indices = engine.shuffled_indices(epoch);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let mut rng = stream(cfg.seed, "mix", &[epoch as u64, batch_idx as u64]);
            let draw = sample_alpha(
                &policy,
                epoch - 1,
                cfg.epochs,
                engine.model.num_layers(),
                &mut rng,
            )?;
            let mixed = make_mixed_batch(&engine.model, train, batch, &pools, &policy, &draw, &mut rng)?;
            let weights = vec![1.0; batch.len()];
            let loss = step_on_mixed_batch(
                &mut engine.model,
                &mixed,
                &weights,
                cfg.lr,
                cfg.weight_decay,
            )?;
            loss_sum += loss * batch.len() as f64;
        }
        engine.finish_epoch(epoch, loss_sum / train.len() as f64, None, None)?;
    }
    let note = convention_note(&policy);
    Ok(engine.into_result(Some(note), None))
}

/// Per-sample dense group indices through the public view (fine-grained).
fn public_group_indices(train: &Dataset) -> Result<Vec<usize>> {
    (0..train.len())
        .map(|i| Ok(train.group_index(train.group_of(i)?)))
        .collect()
}

/// Group-reweighted training: per-batch group losses weight the samples by
/// the current `q`, and `q` follows the exponentiated-gradient update.
pub fn train_groupdro(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(Mlp, RunHistory)> {
    cfg.validate()?;
    let groups = public_group_indices(train)?;
    let n_groups = train.n_groups();
    let mut q = GroupWeights::uniform(n_groups);
    let mut engine = Engine::new(cfg, train, val)?;
    for epoch in 1..=cfg.epochs {
        let indices = engine.shuffled_indices(epoch);
        let mut loss_sum = 0.0;
        let mut group_loss_sum = vec![0.0; n_groups];
        let mut group_count = vec![0usize; n_groups];
        for batch in indices.chunks(cfg.batch_size) {
            let inputs = train.gather_features(batch);
            let targets = train.gather_onehot_targets(batch);
            let batch_groups: Vec<usize> = batch.iter().map(|&i| groups[i]).collect();
            let (logits, _) = engine.model.forward_from(&inputs, 0)?;
            let sample_losses = cross_entropy_rows(&logits, &targets);
            let stats = per_group_losses(&sample_losses, &batch_groups, n_groups)?;
            for g in 0..n_groups {
                group_loss_sum[g] += stats.per_group_loss[g] * stats.per_group_count[g] as f64;
                group_count[g] += stats.per_group_count[g];
            }
            let weights: Vec<f64> = batch_groups
                .iter()
                .map(|&g| q.get(g) / stats.per_group_count[g] as f64)
                .collect();
            let (loss, grads) = engine.model.loss_and_grads(&inputs, &targets, &weights, 0)?;
            engine.model.sgd_step(&grads, cfg.lr, cfg.weight_decay)?;
            loss_sum += loss * batch.len() as f64;
            q = groupdro_update(&q, &stats, cfg.eta_q)?;
        }
        let epoch_group_loss: Vec<f64> = group_loss_sum
            .iter()
            .zip(&group_count)
            .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();
        engine.finish_epoch(
            epoch,
            loss_sum / train.len() as f64,
            Some(epoch_group_loss),
            Some(q.as_slice().to_vec()),
        )?;
    }
    Ok(engine.into_result(None, None))
}

/// Fine-grained variant of the interpolation method: per batch, samples from
/// non-worst groups are mixed with same-class worst-group partners, weighted
/// by `q` on the side the mix lands closer to; `q` updates on the unmixed
/// per-group losses.
pub fn train_groupjm1(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(Mlp, RunHistory)> {
    cfg.validate()?;
    let groups = public_group_indices(train)?;
    let pools = PairingPools::from_groups(train)?;
    let n_groups = train.n_groups();
    let policy = cfg.mix_policy;
    let mut q = GroupWeights::uniform(n_groups);
    let mut engine = Engine::new(cfg, train, val)?;
    for epoch in 1..=cfg.epochs {
        let indices = engine.shuffled_indices(epoch);
        let mut loss_sum = 0.0;
        let mut group_loss_sum = vec![0.0; n_groups];
        let mut group_count = vec![0usize; n_groups];
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let inputs = train.gather_features(batch);
            let targets = train.gather_onehot_targets(batch);
            let batch_groups: Vec<usize> = batch.iter().map(|&i| groups[i]).collect();
            let (logits, _) = engine.model.forward_from(&inputs, 0)?;
            let sample_losses = cross_entropy_rows(&logits, &targets);
            let stats = per_group_losses(&sample_losses, &batch_groups, n_groups)?;
            let wg = stats.worst_group;
            for g in 0..n_groups {
                group_loss_sum[g] += stats.per_group_loss[g] * stats.per_group_count[g] as f64;
                group_count[g] += stats.per_group_count[g];
            }

            let mut rng = stream(cfg.seed, "mix", &[epoch as u64, batch_idx as u64]);
            let draw = sample_alpha(
                &policy,
                epoch - 1,
                cfg.epochs,
                engine.model.num_layers(),
                &mut rng,
            )?;
            let (mixed, row_groups) = make_worst_group_mixed_batch(
                &engine.model,
                train,
                batch,
                &pools,
                wg,
                &draw,
                &mut rng,
            )?;
            let weights: Vec<f64> = row_groups
                .iter()
                .zip(&mixed.partners)
                .map(|(&g, partner)| {
                    if g == wg || partner.is_none() {
                        q.get(g)
                    } else {
                        groupjm1_weight(&q, g, wg, draw.alpha)
                    }
                })
                .collect();
            let loss = step_on_mixed_batch(
                &mut engine.model,
                &mixed,
                &weights,
                cfg.lr,
                cfg.weight_decay,
            )?;
            loss_sum += loss * batch.len() as f64;
            q = groupdro_update(&q, &stats, cfg.eta_q)?;
        }
        let epoch_group_loss: Vec<f64> = group_loss_sum
            .iter()
            .zip(&group_count)
            .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();
        engine.finish_epoch(
            epoch,
            loss_sum / train.len() as f64,
            Some(epoch_group_loss),
            Some(q.as_slice().to_vec()),
        )?;
    }
    let note = "draw -> coefficient on the non-worst endpoint (worst-group weight = 1 - draw)";
    Ok(engine.into_result(Some(note.to_string()), None))
}

/// Dispatch on the configured method.
pub fn train(cfg: &TrainConfig, train_ds: &Dataset, val: &Dataset) -> Result<(Mlp, RunHistory)> {
    match cfg.method {
        Method::Erm => train_erm(cfg, train_ds, val),
        Method::Mixup | Method::Cmixup => train_mixup_baselines(cfg, train_ds, val),
        Method::Jtt => train_jtt(cfg, train_ds, val),
        Method::Jm1 => train_jm1(cfg, train_ds, val),
        Method::Groupdro => train_groupdro(cfg, train_ds, val),
        Method::Groupjm1 => train_groupjm1(cfg, train_ds, val),
    }
}
