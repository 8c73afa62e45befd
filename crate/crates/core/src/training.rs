//! Training windows, schedule modes, the optimization loop and evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::metrics::{metric_report, ControllerMetrics, MetricReport};
use crate::model::{Model, ModelConfig};
use crate::nn::{adam_step, clip_global_norm, AdamConfig, AdamState, Tensor};
use crate::pose::{root_relativize, CharacterSpec, MotionSequence, NormalizationStats};
use crate::schedule::{augment_schedule, dba_extract, random_schedule, AugmentParams, DbaParams, Schedule};

/// Where keypose schedules come from, for training or evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    Dba,
    /// DBA followed by augmentation at the given level.
    DbaAugmented(u8),
    /// Random schedule with masked-frame ratio `r`.
    Random(f64),
    /// Schedules supplied alongside the data.
    GroundTruth,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleMode::Dba => f.write_str("dba"),
            ScheduleMode::DbaAugmented(k) => write!(f, "dba_aug_level_{k}"),
            ScheduleMode::Random(r) => write!(f, "random_{r}"),
            ScheduleMode::GroundTruth => f.write_str("gt"),
        }
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown schedule mode `{s}` (dba, dba_aug_level_K, random_R, gt)"));
        match s {
            "dba" => Ok(ScheduleMode::Dba),
            "gt" => Ok(ScheduleMode::GroundTruth),
            _ => {
                if let Some(k) = s.strip_prefix("dba_aug_level_") {
                    let k: u8 = k.parse().map_err(|_| bad())?;
                    AugmentParams::level(k)?;
                    Ok(ScheduleMode::DbaAugmented(k))
                } else if let Some(r) = s.strip_prefix("random_") {
                    let r: f64 = r.parse().map_err(|_| bad())?;
                    if !(0.0..1.0).contains(&r) {
                        return Err(Error::InvalidRatio(r));
                    }
                    Ok(ScheduleMode::Random(r))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl Serialize for ScheduleMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScheduleMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Schedule for a model-space sequence under `mode`.
pub fn schedule_for(
    seq: &MotionSequence,
    mode: ScheduleMode,
    dba: &DbaParams,
    given: Option<&Schedule>,
    seed: u64,
) -> Result<Schedule> {
    match mode {
        ScheduleMode::Dba => dba_extract(seq, dba),
        ScheduleMode::DbaAugmented(k) => augment_schedule(&dba_extract(seq, dba)?, &AugmentParams::level(k)?, seed),
        ScheduleMode::Random(r) => random_schedule(seq.num_frames(), r, seed),
        ScheduleMode::GroundTruth => {
            let s = given.ok_or_else(|| Error::Config("ground-truth mode needs a schedule per sequence".into()))?;
            s.check_length(seq.num_frames())?;
            Ok(s.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub window_length: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub schedule_mode: ScheduleMode,
    pub head: HeadKind,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Root translate controller; when absent, a controller named "root" is
    /// used if the character has one.
    pub root: Option<String>,
    pub validation_fraction: f64,
    pub clip_norm: f64,
    pub dba: DbaParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_length: 224,
            batch_size: 16,
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
            schedule_mode: ScheduleMode::Dba,
            head: HeadKind::Ais,
            hidden_size: 256,
            num_layers: 2,
            root: None,
            validation_fraction: 0.05,
            clip_norm: 1.0,
            dba: DbaParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 {
            return Err(Error::Config("window_length must be at least 2".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.schedule_mode == ScheduleMode::GroundTruth {
            return Err(Error::Config("training needs dba, dba_aug_level_K or random_R schedules".into()));
        }
        self.dba.validate()
    }

    pub fn model_config(&self, spec: &CharacterSpec) -> ModelConfig {
        let mut mc = ModelConfig::for_spec(spec, self.head, self.hidden_size, self.num_layers);
        if self.root.is_some() {
            mc.root = self.root.clone();
        }
        mc
    }
}

/// A frame range of one dataset sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub sequence: usize,
    pub start: usize,
    pub len: usize,
}

/// One window per sequence: a uniformly random `window_length` slice of
/// longer sequences, the whole of shorter ones.
pub fn make_training_windows(lengths: &[usize], window_length: usize, seed: u64) -> Result<Vec<Window>> {
    if lengths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = lengths.iter().find(|&&n| n < 2) {
        return Err(Error::TooShort { needed: 2, got: bad });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if n > window_length {
                Window {
                    sequence: i,
                    start: rng.random_range(0..=n - window_length),
                    len: window_length,
                }
            } else {
                Window { sequence: i, start: 0, len: n }
            }
        })
        .collect())
}

/// Deterministic `(train, validation)` index split.
pub fn holdout_split(count: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5A17));
    let mut val = if count >= 2 && fraction > 0.0 {
        ((count as f64 * fraction).round() as usize).clamp(1, count - 1)
    } else {
        0
    };
    val = val.min(count);
    let mut v: Vec<usize> = idx[..val].to_vec();
    let mut t: Vec<usize> = idx[val..].to_vec();
    v.sort_unstable();
    t.sort_unstable();
    (t, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub head: HeadKind,
    pub schedule_mode: ScheduleMode,
    pub param_count: usize,
    pub train_sequences: usize,
    pub validation_sequences: usize,
    /// Loss of the first batch before any update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    /// Frame-weighted validation STL1 under DBA schedules, per epoch.
    pub validation_stl1: Vec<f64>,
    pub step_losses: Vec<f64>,
    pub final_sigma: Vec<f64>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Splits off the validation set and trains.
pub fn fit(spec: &CharacterSpec, sequences: &[MotionSequence], config: &TrainConfig) -> Result<(Model, TrainReport)> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_idx, val_idx) = holdout_split(sequences.len(), config.validation_fraction, config.seed);
    let train: Vec<MotionSequence> = train_idx.iter().map(|&i| sequences[i].clone()).collect();
    let val: Vec<MotionSequence> = val_idx.iter().map(|&i| sequences[i].clone()).collect();
    fit_split(spec, &train, &val, config)
}

/// Trains on `train`, tracking STL1 on `validation` after every epoch.
pub fn fit_split(
    spec: &CharacterSpec,
    train: &[MotionSequence],
    validation: &[MotionSequence],
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in train.iter().chain(validation) {
        if s.dim() != spec.dim() || s.discrete_count() != spec.discrete_count() {
            return Err(Error::SpecMismatch("sequence does not match the character".into()));
        }
    }
    let model_config = config.model_config(spec);
    model_config.validate(spec)?;

    // Statistics come from root-relative training data.
    let relative: Vec<MotionSequence> = train
        .iter()
        .map(|s| match &model_config.root {
            Some(name) => root_relativize(s, spec, name),
            None => Ok(s.clone()),
        })
        .collect::<Result<_>>()?;
    let norm = NormalizationStats::fit(spec, &relative)?;
    drop(relative);
    let mut model = Model::new(spec.clone(), model_config, norm, config.seed)?;

    let val_data: Vec<(MotionSequence, Schedule)> = validation
        .iter()
        .map(|s| {
            let (m, _) = model.to_model_space(s)?;
            let sched = dba_extract(&m, &config.dba)?;
            Ok((m, sched))
        })
        .collect::<Result<_>>()?;

    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.store);
    let lengths: Vec<usize> = train.iter().map(MotionSequence::num_frames).collect();
    let mut cache: HashMap<Window, (MotionSequence, Option<Schedule>)> = HashMap::new();
    let mut report = TrainReport {
        head: config.head,
        schedule_mode: config.schedule_mode,
        param_count: model.param_count(),
        train_sequences: train.len(),
        validation_sequences: validation.len(),
        initial_loss: f64::NAN,
        epoch_losses: Vec::with_capacity(config.epochs),
        validation_stl1: Vec::with_capacity(config.epochs),
        step_losses: Vec::new(),
        final_sigma: Vec::new(),
    };

    for epoch in 0..config.epochs {
        let windows = make_training_windows(&lengths, config.window_length, mix(config.seed, 1, epoch as u64))?;
        let mut examples: Vec<(MotionSequence, Schedule)> = Vec::with_capacity(windows.len());
        for (wi, w) in windows.iter().enumerate() {
            if !cache.contains_key(w) {
                let raw = train[w.sequence].window(w.start, w.len)?;
                let (m, _) = model.to_model_space(&raw)?;
                cache.insert(*w, (m, None));
            }
            let entry = cache.get_mut(w).expect("inserted above");
            let wseed = mix(config.seed, 2 + epoch as u64, wi as u64);
            let sched = match config.schedule_mode {
                ScheduleMode::Random(r) => random_schedule(w.len, r, wseed)?,
                mode => {
                    if entry.1.is_none() {
                        entry.1 = Some(dba_extract(&entry.0, &config.dba)?);
                    }
                    let base = entry.1.as_ref().expect("computed above");
                    match mode {
                        ScheduleMode::DbaAugmented(k) => augment_schedule(base, &AugmentParams::level(k)?, wseed)?,
                        _ => base.clone(),
                    }
                }
            };
            examples.push((entry.0.clone(), sched));
        }

        // Equal-length groups, shuffled within and across.
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 3, epoch as u64));
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (seq, _)) in examples.iter().enumerate() {
            groups.entry(seq.num_frames()).or_default().push(i);
        }
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for (_, mut members) in groups {
            members.shuffle(&mut rng);
            batches.extend(members.chunks(config.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut rng);

        let mut total = 0.0;
        for members in &batches {
            let items: Vec<(&MotionSequence, &Schedule)> = members.iter().map(|&i| (&examples[i].0, &examples[i].1)).collect();
            let batch = model.build_batch(&items)?;
            let (g, loss) = model.batch_loss(&batch)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch: Some(epoch),
                    message: format!("loss is {value}"),
                });
            }
            let grads = g.backward(loss)?;
            let mut grads: Vec<Tensor> = grads.for_params(&g, &model.store);
            clip_global_norm(&mut grads, config.clip_norm);
            adam_step(&mut model.store, &grads, &mut state, &adam).map_err(|e| match e {
                Error::TrainingDiverged { message, .. } => Error::TrainingDiverged { epoch: Some(epoch), message },
                other => other,
            })?;
            model.clamp_sigma();
            if report.step_losses.is_empty() {
                report.initial_loss = value;
            }
            report.step_losses.push(value);
            total += value;
        }
        report.epoch_losses.push(total / batches.len() as f64);
        if !val_data.is_empty() {
            report.validation_stl1.push(model_space_stl1(&model, &val_data)?);
        }
        log::info!(
            "epoch {epoch}: loss {:.5}{}",
            report.epoch_losses[epoch],
            report.validation_stl1.last().map_or(String::new(), |v| format!(", val stl1 {v:.5}"))
        );
    }
    report.final_sigma = model.sigma_values().to_vec();
    Ok((model, report))
}

fn model_space_stl1(model: &Model, data: &[(MotionSequence, Schedule)]) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for (seq, sched) in data {
        let (pred, _, _) = model.predict_model_space(seq, sched)?;
        total += crate::metrics::stl1(seq, &pred, sched)? * seq.num_frames() as f64;
        frames += seq.num_frames();
    }
    Ok(total / frames as f64)
}

/// Anything that fills in a model-space sequence from its keyposes.
pub trait Predictor {
    fn spec(&self) -> &CharacterSpec;
    /// Root-relative, normalized representation used for scoring.
    fn to_model_space(&self, seq: &MotionSequence) -> Result<MotionSequence>;
    /// Only the frames in `sched` of `input` may be read.
    fn predict_model_space(&self, input: &MotionSequence, sched: &Schedule) -> Result<MotionSequence>;
}

impl Predictor for Model {
    fn spec(&self) -> &CharacterSpec {
        &self.spec
    }

    fn to_model_space(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        Model::to_model_space(self, seq).map(|(m, _)| m)
    }

    fn predict_model_space(&self, input: &MotionSequence, sched: &Schedule) -> Result<MotionSequence> {
        Model::predict_model_space(self, input, sched).map(|(p, _, _)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ScheduleMode,
    pub sequences: usize,
    pub frames: usize,
    /// Frame-weighted means of the per-sequence reports.
    pub total: MetricReport,
    pub per_sequence: Vec<MetricReport>,
}

/// Scores a predictor in model space. `given` supplies schedules for
/// [`ScheduleMode::GroundTruth`]; other modes derive them from the data.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    sequences: &[MotionSequence],
    mode: ScheduleMode,
    given: Option<&[Schedule]>,
    dba: &DbaParams,
    seed: u64,
) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(g) = given {
        if g.len() != sequences.len() {
            return Err(Error::ScheduleMismatch(format!("{} schedules for {} sequences", g.len(), sequences.len())));
        }
    }
    let spec = predictor.spec();
    let mut per_sequence = Vec::with_capacity(sequences.len());
    let mut frames = 0usize;
    for (i, seq) in sequences.iter().enumerate() {
        if seq.dim() != spec.dim() || seq.discrete_count() != spec.discrete_count() {
            return Err(Error::SpecMismatch(format!("sequence {i} does not match the model's character")));
        }
        let gt = predictor.to_model_space(seq)?;
        let sched = schedule_for(&gt, mode, dba, given.map(|g| &g[i]), mix(seed, 7, i as u64))?;
        let pred = predictor.predict_model_space(&gt, &sched)?;
        per_sequence.push(metric_report(spec, &gt, &pred, &sched)?);
        frames += seq.num_frames();
    }
    let weights: Vec<f64> = sequences.iter().map(|s| s.num_frames() as f64 / frames as f64).collect();
    let wmean = |f: &dyn Fn(&MetricReport) -> f64| -> f64 { per_sequence.iter().zip(&weights).map(|(r, w)| w * f(r)).sum() };
    let mut per_controller = BTreeMap::new();
    for name in per_sequence[0].per_controller.keys() {
        per_controller.insert(
            name.clone(),
            ControllerMetrics {
                stl1: wmean(&|r| r.per_controller[name].stl1),
                npss: wmean(&|r| r.per_controller[name].npss),
            },
        );
    }
    let total = MetricReport {
        stl1: wmean(&|r| r.stl1),
        npss: wmean(&|r| r.npss),
        plain_l1: wmean(&|r| r.plain_l1),
        per_controller,
    };
    Ok(EvalReport {
        mode,
        sequences: sequences.len(),
        frames,
        total,
        per_sequence,
    })
}
