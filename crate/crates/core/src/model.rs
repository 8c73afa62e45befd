//! Encoder plus prediction head, the loss, and single-sequence inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{fixed_interp, head_graph, HeadKind, HeadParams, HeadVars};
use crate::nn::{BiLstmParams, Graph, ParamId, ParamStore, Tensor, Var};
use crate::pose::{build_masked_sequence, hold_discrete, prev_next, CharacterSpec, ControllerKind, MotionSequence, NormalizationStats};
use crate::schedule::Schedule;

/// Lower bound applied to every loss scale after each optimizer step.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub head: HeadKind,
    /// Per-direction LSTM width `h`; hidden states are `2h` wide.
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Translate controller made relative to its frame-0 value.
    pub root: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            head: HeadKind::Ais,
            hidden_size: 256,
            num_layers: 2,
            root: Some("root".into()),
        }
    }
}

impl ModelConfig {
    /// `root` set to the controller named "root" when the character has one.
    pub fn for_spec(spec: &CharacterSpec, head: HeadKind, hidden_size: usize, num_layers: usize) -> Self {
        let root = spec
            .controller("root")
            .filter(|c| c.kind == ControllerKind::Translate)
            .map(|c| c.name.clone());
        ModelConfig {
            head,
            hidden_size,
            num_layers,
            root,
        }
    }

    pub fn validate(&self, spec: &CharacterSpec) -> Result<()> {
        if self.hidden_size == 0 || self.num_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer of non-zero width".into()));
        }
        if let Some(name) = &self.root {
            match spec.controller(name) {
                Some(c) if c.kind == ControllerKind::Translate => {}
                Some(_) => return Err(Error::Config(format!("root controller `{name}` is not a translate controller"))),
                None => return Err(Error::Config(format!("root controller `{name}` is not in the character"))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: CharacterSpec,
    pub config: ModelConfig,
    pub norm: NormalizationStats,
    pub seed: u64,
    pub store: ParamStore,
    pub encoder: BiLstmParams,
    pub head: HeadParams,
    /// Per-channel loss scales, `1 x D`.
    pub sigma: ParamId,
}

/// Stacked, time-major inputs for `batch` sequences of `steps` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub steps: usize,
    pub batch: usize,
    /// `(steps * batch) x (D + 1)` masked input.
    pub input: Tensor,
    pub prev: Tensor,
    pub next: Tensor,
    /// Fixed interpolation for offset heads.
    pub fixed: Option<Tensor>,
    /// Ground truth, `(steps * batch) x D`.
    pub target: Tensor,
}

/// Result of [`Model::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Frames in the caller's units with discrete channels held.
    pub sequence: MotionSequence,
    /// `N x D` gates of heads that have them.
    pub alpha: Option<Tensor>,
    pub beta: Option<Tensor>,
}

impl Model {
    /// Fresh parameters, drawn from `seed`. Store order: encoder, head, loss
    /// scales.
    pub fn new(spec: CharacterSpec, config: ModelConfig, norm: NormalizationStats, seed: u64) -> Result<Self> {
        config.validate(&spec)?;
        if norm.dim() != spec.dim() {
            return Err(Error::SpecMismatch(format!(
                "normalization covers {} channels, character has {}",
                norm.dim(),
                spec.dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = spec.dim();
        let encoder = BiLstmParams::init(&mut store, d + 1, config.hidden_size, config.num_layers, &mut rng);
        let head = HeadParams::init(&mut store, config.head, encoder.output_size(), d, &mut rng);
        let sigma = store.add("loss.sigma", Tensor::filled(1, d, 1.0));
        Ok(Model {
            spec,
            config,
            norm,
            seed,
            store,
            encoder,
            head,
            sigma,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn sigma_values(&self) -> &[f64] {
        self.store.get(self.sigma).data()
    }

    /// Floors every loss scale at [`SIGMA_FLOOR`].
    pub fn clamp_sigma(&mut self) {
        for s in self.store.get_mut(self.sigma).data_mut() {
            *s = s.max(SIGMA_FLOOR);
        }
    }

    fn root_channels(&self) -> Option<std::ops::Range<usize>> {
        let name = self.config.root.as_ref()?;
        self.spec.controller(name).map(|c| c.channels())
    }

    /// Root-relative, normalized copy and the subtracted root offset.
    pub fn to_model_space(&self, seq: &MotionSequence) -> Result<(MotionSequence, Vec<f64>)> {
        seq.check_spec(&self.spec)?;
        let mut out = seq.clone();
        let mut origin = Vec::new();
        if let Some(ch) = self.root_channels() {
            origin = seq.frame(0)[ch.clone()].to_vec();
            for t in 0..out.num_frames() {
                for (v, o) in out.frame_mut(t)[ch.clone()].iter_mut().zip(&origin) {
                    *v -= o;
                }
            }
        }
        for t in 0..out.num_frames() {
            self.norm.normalize_pose(out.frame_mut(t));
        }
        out.normalized = true;
        Ok((out, origin))
    }

    pub fn from_model_space(&self, seq: &MotionSequence, origin: &[f64]) -> Result<MotionSequence> {
        let mut out = seq.clone();
        for t in 0..out.num_frames() {
            self.norm.denormalize_pose(out.frame_mut(t));
        }
        if let Some(ch) = self.root_channels() {
            if origin.len() != ch.len() {
                return Err(Error::Shape("root offset width does not match root controller".into()));
            }
            for t in 0..out.num_frames() {
                for (v, o) in out.frame_mut(t)[ch.clone()].iter_mut().zip(origin) {
                    *v += o;
                }
            }
        }
        out.normalized = false;
        Ok(out)
    }

    /// Stacks model-space sequences of equal length with their schedules.
    pub fn build_batch(&self, items: &[(&MotionSequence, &Schedule)]) -> Result<Batch> {
        let Some(&(first, _)) = items.first() else {
            return Err(Error::EmptyDataset);
        };
        let steps = first.num_frames();
        let batch = items.len();
        let d = self.spec.dim();
        let mut input = Tensor::zeros(steps * batch, d + 1);
        let mut prev = Tensor::zeros(steps * batch, d);
        let mut next = Tensor::zeros(steps * batch, d);
        let mut target = Tensor::zeros(steps * batch, d);
        let fixed_kind = self.config.head.fixed_interp();
        let mut fixed = fixed_kind.map(|_| Tensor::zeros(steps * batch, d));
        for (b, &(seq, sched)) in items.iter().enumerate() {
            if seq.num_frames() != steps {
                return Err(Error::Shape("batch sequences differ in length".into()));
            }
            if seq.dim() != d {
                return Err(Error::SpecMismatch(format!("sequence width {} but character width {d}", seq.dim())));
            }
            let masked = build_masked_sequence(seq, sched)?;
            for t in 0..steps {
                let row = t * batch + b;
                let (l, r) = prev_next(sched, t);
                input.data_mut()[row * (d + 1)..(row + 1) * (d + 1)].copy_from_slice(masked.row(t));
                prev.data_mut()[row * d..(row + 1) * d].copy_from_slice(seq.frame(l));
                next.data_mut()[row * d..(row + 1) * d].copy_from_slice(seq.frame(r));
                target.data_mut()[row * d..(row + 1) * d].copy_from_slice(seq.frame(t));
                if let (Some(kind), Some(f)) = (fixed_kind, fixed.as_mut()) {
                    let fi = fixed_interp(kind, seq.frame(l), seq.frame(r), t, l, r, &self.spec)?;
                    if !fi.degenerate.is_empty() {
                        log::debug!("frame {t}: linear 6D fallback for {:?}", fi.degenerate);
                    }
                    f.data_mut()[row * d..(row + 1) * d].copy_from_slice(&fi.pose);
                }
            }
        }
        Ok(Batch {
            steps,
            batch,
            input,
            prev,
            next,
            fixed,
            target,
        })
    }

    /// Encoder and head on the tape.
    pub fn forward_graph(&self, g: &mut Graph, batch: &Batch) -> Result<HeadVars> {
        let x = g.constant(batch.input.clone());
        let hidden = self.encoder.forward_graph(g, &self.store, x, batch.steps, batch.batch)?;
        let prev = g.constant(batch.prev.clone());
        let next = g.constant(batch.next.clone());
        let fixed = batch.fixed.as_ref().map(|f| g.constant(f.clone()));
        head_graph(g, &self.store, &self.head, hidden, prev, next, fixed)
    }

    /// Mean over frames and batch of the per-frame weighted L1 loss.
    pub fn loss_graph(&self, g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
        let rows = target.rows();
        let t = g.constant(target.clone());
        let sigma = g.param(&self.store, self.sigma);
        weighted_l1_graph(g, pred, t, sigma, rows)
    }

    /// Forward pass and loss; returns the graph so callers can backpropagate.
    pub fn batch_loss(&self, batch: &Batch) -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, batch)?;
        let loss = self.loss_graph(&mut g, vars.pred, &batch.target)?;
        Ok((g, loss))
    }

    /// Predicts a model-space sequence; only frames in `sched` are read.
    pub fn predict_model_space(&self, seq: &MotionSequence, sched: &Schedule) -> Result<(MotionSequence, Option<Tensor>, Option<Tensor>)> {
        let batch = self.build_batch(&[(seq, sched)])?;
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, &batch)?;
        let pred = g.value(vars.pred).clone();
        let mut out = MotionSequence::from_flat(pred.into_data(), seq.num_frames(), seq.dim(), seq.discrete().to_vec(), seq.discrete_count(), seq.fps)?;
        out.normalized = true;
        let alpha = vars.alpha.map(|v| g.value(v).clone());
        let beta = vars.beta.map(|v| g.value(v).clone());
        Ok((out, alpha, beta))
    }

    /// Full inference on caller-unit data: root-relative transform, normalize,
    /// encode, head, back to caller units, discrete channels held from the
    /// preceding keypose.
    pub fn predict(&self, seq: &MotionSequence, sched: &Schedule) -> Result<Prediction> {
        sched.check_length(seq.num_frames())?;
        let (model_seq, origin) = self.to_model_space(seq)?;
        let (pred, alpha, beta) = self.predict_model_space(&model_seq, sched)?;
        let mut out = self.from_model_space(&pred, &origin)?;
        let held = hold_discrete(seq.discrete(), seq.discrete_count(), sched)?;
        out = out.with_discrete(held)?;
        Ok(Prediction {
            sequence: out,
            alpha,
            beta,
        })
    }
}

/// `sum_d |pred_d - gt_d| / (2 sigma_d^2) + log(1 + sigma_d^2)` for one frame.
pub fn weighted_l1_loss(pred: &[f64], gt: &[f64], sigma: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "loss widths differ: pred {}, gt {}, sigma {}",
            pred.len(),
            gt.len(),
            sigma.len()
        )));
    }
    if pred.iter().chain(gt).chain(sigma).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite loss input".into()));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .zip(sigma)
        .map(|((p, g), s)| (p - g).abs() / (2.0 * s * s) + (1.0 + s * s).ln())
        .sum())
}

/// Mean of [`weighted_l1_loss`] over the frames of a sequence.
pub fn sequence_loss(pred: &MotionSequence, gt: &MotionSequence, sigma: &[f64]) -> Result<f64> {
    if pred.num_frames() != gt.num_frames() {
        return Err(Error::Shape("sequence lengths differ".into()));
    }
    let mut total = 0.0;
    for t in 0..gt.num_frames() {
        total += weighted_l1_loss(pred.frame(t), gt.frame(t), sigma)?;
    }
    Ok(total / gt.num_frames() as f64)
}

/// Tape version of the loss, averaged over `rows` frames.
pub fn weighted_l1_graph(g: &mut Graph, pred: Var, target: Var, sigma: Var, rows: usize) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let err = g.abs(diff);
    let s2 = g.square(sigma);
    let two_s2 = g.scale(s2, 2.0);
    let inv = g.recip(two_s2);
    let weighted = g.mul_row(err, inv)?;
    let data = g.sum(weighted);
    let data = g.scale(data, 1.0 / rows as f64);
    let reg = g.affine(s2, 1.0, 1.0);
    let reg = g.log(reg);
    let reg = g.sum(reg);
    g.add(data, reg)
}
