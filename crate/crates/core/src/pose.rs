//! Pose representation: character layout, dense motion tracks, normalization,
//! the masked network input and keypose neighbor lookup.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schedule::Schedule;

/// Rig controller kind. Continuous kinds occupy channels of the pose vector;
/// discrete controllers occupy one integer channel of the discrete track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Translate,
    Rotate,
    Scale,
    Discrete,
}

impl ControllerKind {
    /// Number of pose-vector channels the controller occupies.
    pub fn width(self) -> usize {
        match self {
            ControllerKind::Translate | ControllerKind::Scale => 3,
            ControllerKind::Rotate => 6,
            ControllerKind::Discrete => 0,
        }
    }

    pub fn is_discrete(self) -> bool {
        self == ControllerKind::Discrete
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub name: String,
    pub kind: ControllerKind,
    /// Offset into the pose vector, or into the discrete track for discrete
    /// controllers.
    pub channel_offset: usize,
}

impl Controller {
    pub fn channels(&self) -> std::ops::Range<usize> {
        self.channel_offset..self.channel_offset + self.kind.width()
    }
}

/// Layout of the continuous pose vector and the discrete track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDecl", into = "SpecDecl")]
pub struct CharacterSpec {
    controllers: Vec<Controller>,
    dim: usize,
    discrete_count: usize,
}

#[derive(Serialize, Deserialize)]
struct SpecDecl {
    controllers: Vec<ControllerDecl>,
}

#[derive(Serialize, Deserialize)]
struct ControllerDecl {
    name: String,
    kind: ControllerKind,
}

impl TryFrom<SpecDecl> for CharacterSpec {
    type Error = Error;
    fn try_from(decl: SpecDecl) -> Result<Self> {
        CharacterSpec::new(decl.controllers.into_iter().map(|c| (c.name, c.kind)))
    }
}

impl From<CharacterSpec> for SpecDecl {
    fn from(spec: CharacterSpec) -> Self {
        SpecDecl {
            controllers: spec
                .controllers
                .into_iter()
                .map(|c| ControllerDecl {
                    name: c.name,
                    kind: c.kind,
                })
                .collect(),
        }
    }
}

impl CharacterSpec {
    /// Lays controllers out in declaration order.
    pub fn new<S: Into<String>>(decls: impl IntoIterator<Item = (S, ControllerKind)>) -> Result<Self> {
        let mut controllers = Vec::new();
        let mut dim = 0;
        let mut discrete_count = 0;
        for (name, kind) in decls {
            let name = name.into();
            if controllers.iter().any(|c: &Controller| c.name == name) {
                return Err(Error::SpecMismatch(format!("duplicate controller `{name}`")));
            }
            let channel_offset = if kind.is_discrete() {
                discrete_count += 1;
                discrete_count - 1
            } else {
                dim += kind.width();
                dim - kind.width()
            };
            controllers.push(Controller {
                name,
                kind,
                channel_offset,
            });
        }
        if dim == 0 {
            return Err(Error::SpecMismatch(
                "character has no continuous controllers".into(),
            ));
        }
        Ok(CharacterSpec {
            controllers,
            dim,
            discrete_count,
        })
    }

    pub fn controllers(&self) -> &[Controller] {
        &self.controllers
    }

    /// Total continuous dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn discrete_count(&self) -> usize {
        self.discrete_count
    }

    pub fn controller(&self, name: &str) -> Option<&Controller> {
        self.controllers.iter().find(|c| c.name == name)
    }

    pub fn continuous(&self) -> impl Iterator<Item = &Controller> {
        self.controllers.iter().filter(|c| !c.kind.is_discrete())
    }

    pub fn rotations(&self) -> impl Iterator<Item = &Controller> {
        self.controllers
            .iter()
            .filter(|c| c.kind == ControllerKind::Rotate)
    }

    /// Kind of every pose-vector channel.
    pub fn channel_kinds(&self) -> Vec<ControllerKind> {
        let mut kinds = vec![ControllerKind::Translate; self.dim];
        for c in self.continuous() {
            for ch in c.channels() {
                kinds[ch] = c.kind;
            }
        }
        kinds
    }

    /// Hex SHA-256 of the canonical `name:kind` listing.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.controllers {
            let kind = serde_json::to_string(&c.kind).expect("kind serializes");
            h.update(c.name.as_bytes());
            h.update(b":");
            h.update(kind.as_bytes());
            h.update(b";");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Dense N x D pose track plus N x K discrete track.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Vec<f64>,
    num_frames: usize,
    dim: usize,
    discrete: Vec<i64>,
    discrete_count: usize,
    pub fps: f64,
    pub normalized: bool,
}

impl MotionSequence {
    pub fn new(
        frames: Vec<Vec<f64>>,
        discrete: Vec<Vec<i64>>,
        fps: f64,
    ) -> Result<Self> {
        let num_frames = frames.len();
        if num_frames < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: num_frames,
            });
        }
        let dim = frames[0].len();
        let discrete_count = discrete.first().map_or(0, Vec::len);
        if !discrete.is_empty() && discrete.len() != num_frames {
            return Err(Error::Shape(format!(
                "discrete track has {} frames, pose track has {num_frames}",
                discrete.len()
            )));
        }
        let mut flat = Vec::with_capacity(num_frames * dim);
        for (t, f) in frames.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::Shape(format!(
                    "frame {t} has {} channels, expected {dim}",
                    f.len()
                )));
            }
            flat.extend_from_slice(f);
        }
        let mut dflat = Vec::with_capacity(num_frames * discrete_count);
        for (t, d) in discrete.iter().enumerate() {
            if d.len() != discrete_count {
                return Err(Error::Shape(format!(
                    "discrete frame {t} has {} channels, expected {discrete_count}",
                    d.len()
                )));
            }
            dflat.extend_from_slice(d);
        }
        Self::from_flat(flat, num_frames, dim, dflat, discrete_count, fps)
    }

    pub fn from_flat(
        frames: Vec<f64>,
        num_frames: usize,
        dim: usize,
        discrete: Vec<i64>,
        discrete_count: usize,
        fps: f64,
    ) -> Result<Self> {
        if num_frames < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: num_frames,
            });
        }
        if frames.len() != num_frames * dim || discrete.len() != num_frames * discrete_count {
            return Err(Error::Shape(format!(
                "flat buffers do not match {num_frames} x {dim} (+{discrete_count} discrete)"
            )));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at frame {}, channel {}",
                i / dim.max(1),
                i % dim.max(1)
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Numeric(format!("invalid frame rate {fps}")));
        }
        Ok(MotionSequence {
            frames,
            num_frames,
            dim,
            discrete,
            discrete_count,
            fps,
            normalized: false,
        })
    }

    /// Single-channel convenience constructor.
    pub fn from_channel(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.to_vec(), values.len(), 1, Vec::new(), 0, 24.0)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn discrete_count(&self) -> usize {
        self.discrete_count
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn discrete_frame(&self, t: usize) -> &[i64] {
        &self.discrete[t * self.discrete_count..(t + 1) * self.discrete_count]
    }

    pub fn discrete(&self) -> &[i64] {
        &self.discrete
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.frames.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn discrete_rows(&self) -> Vec<Vec<i64>> {
        if self.discrete_count == 0 {
            return vec![Vec::new(); self.num_frames];
        }
        self.discrete
            .chunks(self.discrete_count)
            .map(<[i64]>::to_vec)
            .collect()
    }

    /// One channel across all frames.
    pub fn channel(&self, d: usize) -> Vec<f64> {
        (0..self.num_frames).map(|t| self.frames[t * self.dim + d]).collect()
    }

    /// Contiguous frame range `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<MotionSequence> {
        if start + len > self.num_frames {
            return Err(Error::Shape(format!(
                "window [{start}, {}) exceeds {} frames",
                start + len,
                self.num_frames
            )));
        }
        let mut out = MotionSequence::from_flat(
            self.frames[start * self.dim..(start + len) * self.dim].to_vec(),
            len,
            self.dim,
            self.discrete[start * self.discrete_count..(start + len) * self.discrete_count]
                .to_vec(),
            self.discrete_count,
            self.fps,
        )?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Copy holding only the given continuous channels; the discrete track is dropped.
    pub fn select_channels(&self, channels: std::ops::Range<usize>) -> MotionSequence {
        let w = channels.len();
        let mut frames = Vec::with_capacity(self.num_frames * w);
        for t in 0..self.num_frames {
            frames.extend_from_slice(&self.frame(t)[channels.clone()]);
        }
        MotionSequence {
            frames,
            num_frames: self.num_frames,
            dim: w,
            discrete: Vec::new(),
            discrete_count: 0,
            fps: self.fps,
            normalized: self.normalized,
        }
    }

    pub fn with_discrete(mut self, discrete: Vec<i64>) -> Result<Self> {
        if discrete.len() != self.num_frames * self.discrete_count {
            return Err(Error::Shape("discrete track length mismatch".into()));
        }
        self.discrete = discrete;
        Ok(self)
    }

    /// Counts translate/scale values outside the soft `[-1.5, 1.5]` band of
    /// normalized data and logs a warning if any are found.
    pub fn check_normalized_range(&self, spec: &CharacterSpec) -> usize {
        let kinds = spec.channel_kinds();
        let outside = self
            .frames
            .iter()
            .enumerate()
            .filter(|(i, v)| kinds[i % self.dim] != ControllerKind::Rotate && v.abs() > 1.5)
            .count();
        if outside > 0 {
            log::warn!("{outside} normalized translate/scale values fall outside [-1.5, 1.5]");
        }
        outside
    }

    pub(crate) fn check_spec(&self, spec: &CharacterSpec) -> Result<()> {
        if self.dim != spec.dim() || self.discrete_count != spec.discrete_count() {
            return Err(Error::SpecMismatch(format!(
                "sequence has {} continuous / {} discrete channels, character declares {} / {}",
                self.dim,
                self.discrete_count,
                spec.dim(),
                spec.discrete_count()
            )));
        }
        Ok(())
    }
}

/// Per-channel divisor `3 * std` for translate and scale channels; rotation
/// channels pass through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Standard deviation per pose channel (1.0 on rotation channels).
    pub std: Vec<f64>,
    /// Whether the channel is normalized at all.
    pub active: Vec<bool>,
    /// Channels whose training variance was zero and were assigned std 1.
    pub flagged: Vec<usize>,
}

impl NormalizationStats {
    /// Identity statistics (every divisor 1, nothing normalized).
    pub fn identity(dim: usize) -> Self {
        NormalizationStats {
            std: vec![1.0; dim],
            active: vec![false; dim],
            flagged: Vec::new(),
        }
    }

    /// Population standard deviation over every frame of every sequence.
    pub fn fit<'a>(
        spec: &CharacterSpec,
        seqs: impl IntoIterator<Item = &'a MotionSequence>,
    ) -> Result<Self> {
        let dim = spec.dim();
        let kinds = spec.channel_kinds();
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for seq in seqs {
            seq.check_spec(spec)?;
            for t in 0..seq.num_frames() {
                count += 1;
                for (d, &x) in seq.frame(t).iter().enumerate() {
                    let delta = x - mean[d];
                    mean[d] += delta / count as f64;
                    m2[d] += delta * (x - mean[d]);
                }
            }
        }
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut std = vec![1.0; dim];
        let mut active = vec![false; dim];
        let mut flagged = Vec::new();
        for d in 0..dim {
            if kinds[d] == ControllerKind::Rotate {
                continue;
            }
            active[d] = true;
            let s = (m2[d] / count as f64).sqrt();
            if s > 0.0 && s.is_finite() {
                std[d] = s;
            } else {
                log::warn!("channel {d} has zero training variance; using std 1");
                flagged.push(d);
            }
        }
        Ok(NormalizationStats { std, active, flagged })
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    fn divisor(&self, d: usize) -> f64 {
        if self.active[d] {
            3.0 * self.std[d]
        } else {
            1.0
        }
    }

    /// Normalizes a single pose vector in place.
    pub fn normalize_pose(&self, pose: &mut [f64]) {
        for (d, v) in pose.iter_mut().enumerate() {
            if self.active[d] {
                *v /= self.divisor(d);
            }
        }
    }

    pub fn denormalize_pose(&self, pose: &mut [f64]) {
        for (d, v) in pose.iter_mut().enumerate() {
            if self.active[d] {
                *v *= self.divisor(d);
            }
        }
    }
}

pub fn normalize(seq: &MotionSequence, stats: &NormalizationStats) -> Result<MotionSequence> {
    if seq.normalized {
        return Err(Error::SpecMismatch("sequence is already normalized".into()));
    }
    if stats.dim() != seq.dim() {
        return Err(Error::SpecMismatch(format!(
            "stats cover {} channels, sequence has {}",
            stats.dim(),
            seq.dim()
        )));
    }
    let mut out = seq.clone();
    for t in 0..out.num_frames() {
        stats.normalize_pose(out.frame_mut(t));
    }
    out.normalized = true;
    Ok(out)
}

pub fn denormalize(seq: &MotionSequence, stats: &NormalizationStats) -> Result<MotionSequence> {
    if stats.dim() != seq.dim() {
        return Err(Error::SpecMismatch(format!(
            "stats cover {} channels, sequence has {}",
            stats.dim(),
            seq.dim()
        )));
    }
    let mut out = seq.clone();
    for t in 0..out.num_frames() {
        stats.denormalize_pose(out.frame_mut(t));
    }
    out.normalized = false;
    Ok(out)
}

/// Subtracts the frame-0 value of the named translate controller from every
/// frame.
pub fn root_relativize(
    seq: &MotionSequence,
    spec: &CharacterSpec,
    root_controller: &str,
) -> Result<MotionSequence> {
    let root = spec
        .controller(root_controller)
        .ok_or_else(|| Error::SpecMismatch(format!("unknown controller `{root_controller}`")))?;
    if root.kind != ControllerKind::Translate {
        return Err(Error::SpecMismatch(format!(
            "root controller `{root_controller}` is not a translate controller"
        )));
    }
    seq.check_spec(spec)?;
    let channels = root.channels();
    let origin: Vec<f64> = seq.frame(0)[channels.clone()].to_vec();
    let mut out = seq.clone();
    for t in 0..out.num_frames() {
        for (v, o) in out.frame_mut(t)[channels.clone()].iter_mut().zip(&origin) {
            *v -= o;
        }
    }
    Ok(out)
}

/// Network input: N x (D + 1) rows, keyposes copied with mask 0, every other
/// frame zeroed with mask 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub rows: Vec<f64>,
    pub num_frames: usize,
    pub width: usize,
    pub keypose_indices: Schedule,
}

impl MaskedSequence {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.width..(t + 1) * self.width]
    }
}

pub fn build_masked_sequence(seq: &MotionSequence, sched: &Schedule) -> Result<MaskedSequence> {
    sched.check_length(seq.num_frames())?;
    let n = seq.num_frames();
    let d = seq.dim();
    let width = d + 1;
    let mut rows = vec![0.0; n * width];
    let mut keys = sched.indices().iter().peekable();
    for t in 0..n {
        let row = &mut rows[t * width..(t + 1) * width];
        if keys.peek() == Some(&&t) {
            keys.next();
            row[..d].copy_from_slice(seq.frame(t));
        } else {
            row[d] = 1.0;
        }
    }
    Ok(MaskedSequence {
        rows,
        num_frames: n,
        width,
        keypose_indices: sched.clone(),
    })
}

/// Closest surrounding keyposes `(l(t), r(t))`.
pub fn prev_next(sched: &Schedule, t: usize) -> (usize, usize) {
    let idx = sched.indices();
    match idx.binary_search(&t) {
        Ok(_) => (t, t),
        Err(pos) => {
            // Endpoints are always present, so 0 < pos < len for interior t.
            let pos = pos.clamp(1, idx.len() - 1);
            (idx[pos - 1], idx[pos])
        }
    }
}

/// Holds every discrete channel at its value on the last keypose.
pub fn hold_discrete(discrete: &[i64], discrete_count: usize, sched: &Schedule) -> Result<Vec<i64>> {
    let n = sched.len();
    if discrete.len() != n * discrete_count {
        return Err(Error::ScheduleMismatch(format!(
            "discrete track length {} does not match {n} frames x {discrete_count}",
            discrete.len()
        )));
    }
    let mut out = Vec::with_capacity(discrete.len());
    for t in 0..n {
        let (l, _) = prev_next(sched, t);
        out.extend_from_slice(&discrete[l * discrete_count..(l + 1) * discrete_count]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Provenance;

    fn sched(idx: &[usize], n: usize) -> Schedule {
        Schedule::new(idx.to_vec(), n, Provenance::User).unwrap()
    }

    fn spec_trs() -> CharacterSpec {
        CharacterSpec::new([
            ("root", ControllerKind::Translate),
            ("spine", ControllerKind::Rotate),
            ("size", ControllerKind::Scale),
            ("ik", ControllerKind::Discrete),
        ])
        .unwrap()
    }

    #[test]
    fn layout_is_contiguous_in_declaration_order() {
        let spec = spec_trs();
        assert_eq!(spec.dim(), 12);
        assert_eq!(spec.discrete_count(), 1);
        let offsets: Vec<_> = spec.controllers().iter().map(|c| c.channel_offset).collect();
        assert_eq!(offsets, vec![0, 3, 9, 0]);
        assert_eq!(spec.channel_kinds()[3], ControllerKind::Rotate);
        assert_eq!(spec.channel_kinds()[9], ControllerKind::Scale);
    }

    #[test]
    fn masked_sequence_follows_mask_rule() {
        let seq = MotionSequence::new(
            vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]],
            vec![],
            24.0,
        )
        .unwrap();
        let m = build_masked_sequence(&seq, &sched(&[0, 2], 3)).unwrap();
        assert_eq!(m.rows, vec![0.1, 0.2, 0.0, 0.0, 0.0, 1.0, 0.5, 0.6, 0.0]);
    }

    #[test]
    fn all_keyposes_give_zero_mask() {
        let seq = MotionSequence::from_channel(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = build_masked_sequence(&seq, &sched(&[0, 1, 2, 3], 4)).unwrap();
        assert!((0..4).all(|t| m.row(t)[1] == 0.0));
    }

    #[test]
    fn schedule_without_frame_zero_is_rejected() {
        assert!(matches!(
            Schedule::new(vec![1, 2], 3, Provenance::User),
            Err(Error::ScheduleMismatch(_))
        ));
        let seq = MotionSequence::from_channel(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            build_masked_sequence(&seq, &sched(&[0, 2], 3)),
            Err(Error::ScheduleMismatch(_))
        ));
    }

    #[test]
    fn prev_next_lookup() {
        assert_eq!(prev_next(&sched(&[0, 2], 3), 1), (0, 2));
        assert_eq!(prev_next(&sched(&[0, 2], 3), 0), (0, 0));
        assert_eq!(prev_next(&sched(&[0, 3, 7], 8), 5), (3, 7));
        assert_eq!(prev_next(&sched(&[0, 3, 7], 8), 7), (7, 7));
    }

    #[test]
    fn normalization_scales_translate_channels_only() {
        let spec = CharacterSpec::new([
            ("root", ControllerKind::Translate),
            ("spine", ControllerKind::Rotate),
        ])
        .unwrap();
        let mut stats = NormalizationStats::identity(9);
        stats.active[..3].fill(true);
        stats.std[..3].fill(2.0);
        let mut row = vec![0.0; 9];
        row[0] = 3.0;
        row[4] = 0.7;
        let seq = MotionSequence::new(vec![row.clone(), row], vec![], 24.0).unwrap();
        let n = normalize(&seq, &stats).unwrap();
        assert_eq!(n.frame(0)[0], 0.5);
        assert_eq!(n.frame(0)[4], 0.7);
        assert!(n.normalized);
        assert!(normalize(&n, &stats).is_err());
        assert!(normalize(&seq, &NormalizationStats::identity(3)).is_err());
        assert_eq!(n.check_normalized_range(&spec), 0);
    }

    #[test]
    fn zero_variance_channels_are_flagged() {
        let spec = CharacterSpec::new([("root", ControllerKind::Translate)]).unwrap();
        let seq = MotionSequence::new(
            vec![vec![1.0, 5.0, 0.0], vec![3.0, 5.0, 0.0]],
            vec![],
            24.0,
        )
        .unwrap();
        let stats = NormalizationStats::fit(&spec, [&seq]).unwrap();
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(stats.flagged, vec![1, 2]);
        assert!(stats.std.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn root_relativization() {
        let spec = spec_trs();
        let mut a = vec![0.0; 12];
        a[..3].copy_from_slice(&[5.0, 0.0, 1.0]);
        let mut b = a.clone();
        b[0] = 7.0;
        let seq = MotionSequence::new(vec![a.clone(), b], vec![vec![0], vec![1]], 24.0).unwrap();
        let rel = root_relativize(&seq, &spec, "root").unwrap();
        assert_eq!(&rel.frame(0)[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(rel.frame(1)[0], 2.0);
        assert_eq!(root_relativize(&rel, &spec, "root").unwrap(), rel);

        let constant = MotionSequence::new(vec![a.clone(), a], vec![vec![0], vec![0]], 24.0).unwrap();
        let rel = root_relativize(&constant, &spec, "root").unwrap();
        assert!(rel.frames().iter().all(|&v| v == 0.0));

        assert!(matches!(
            root_relativize(&seq, &spec, "hips"),
            Err(Error::SpecMismatch(_))
        ));
        assert!(root_relativize(&seq, &spec, "spine").is_err());
    }

    #[test]
    fn discrete_values_are_held_from_last_keypose() {
        let held = hold_discrete(&[1, 9, 9, 9, 2], 1, &sched(&[0, 4], 5)).unwrap();
        assert_eq!(held, vec![1, 1, 1, 1, 2]);
        let all = hold_discrete(&[1, 9, 9, 9, 2], 1, &sched(&[0, 1, 2, 3, 4], 5)).unwrap();
        assert_eq!(all, vec![1, 9, 9, 9, 2]);
        assert_eq!(hold_discrete(&[3, 4], 1, &sched(&[0, 1], 2)).unwrap(), vec![3, 4]);
    }

    #[test]
    fn rejects_non_finite_frames() {
        assert!(matches!(
            MotionSequence::from_channel(&[0.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            MotionSequence::from_channel(&[0.0]),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = spec_trs();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<CharacterSpec>(&json).unwrap(), spec);
        assert_eq!(spec.hash().len(), 64);
    }
}
