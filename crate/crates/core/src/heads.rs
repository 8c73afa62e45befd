//! Prediction heads on top of the encoder's hidden states.
//!
//! The adaptive head blends a learned interpolation of the surrounding
//! keyposes with a directly regressed pose through a learned per-channel
//! gate. The other variants drop or freeze parts of that structure.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mlp_forward, Graph, MlpParams, OutputActivation, ParamId, ParamStore, Var};
use crate::pose::{CharacterSpec, ControllerKind};
use crate::rotation::{rotmatrix_to_6d, sixd_to_rotmatrix, Quat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Learned interpolation and synthesis blended by a learned gate.
    Ais,
    DirectSynthesis,
    SlerpOffset,
    Linear6dOffset,
    PreviousOffset,
    InterpOnly,
    InterpOffset,
    FixedGate,
}

impl HeadKind {
    pub const ALL: [HeadKind; 8] = [
        HeadKind::Ais,
        HeadKind::DirectSynthesis,
        HeadKind::SlerpOffset,
        HeadKind::Linear6dOffset,
        HeadKind::PreviousOffset,
        HeadKind::InterpOnly,
        HeadKind::InterpOffset,
        HeadKind::FixedGate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Ais => "ais",
            HeadKind::DirectSynthesis => "direct_synthesis",
            HeadKind::SlerpOffset => "slerp_offset",
            HeadKind::Linear6dOffset => "linear6d_offset",
            HeadKind::PreviousOffset => "previous_offset",
            HeadKind::InterpOnly => "interp_only",
            HeadKind::InterpOffset => "interp_offset",
            HeadKind::FixedGate => "fixed_gate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown head kind `{s}`")))
    }

    /// Fixed interpolation feeding the offset variants.
    pub fn fixed_interp(self) -> Option<FixedInterpKind> {
        match self {
            HeadKind::SlerpOffset => Some(FixedInterpKind::Slerp),
            HeadKind::Linear6dOffset => Some(FixedInterpKind::Linear6d),
            HeadKind::PreviousOffset => Some(FixedInterpKind::Previous),
            _ => None,
        }
    }

    pub fn has_alpha(self) -> bool {
        matches!(
            self,
            HeadKind::Ais | HeadKind::InterpOnly | HeadKind::InterpOffset | HeadKind::FixedGate
        )
    }

    pub fn has_beta(self) -> bool {
        self == HeadKind::Ais
    }

    pub fn has_synth(self) -> bool {
        self != HeadKind::InterpOnly
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedInterpKind {
    Slerp,
    Linear6d,
    Previous,
}

/// The head's MLPs. All share the `[H, H, D]` architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub alpha: Option<MlpParams>,
    pub beta: Option<MlpParams>,
    pub synth: Option<MlpParams>,
}

impl HeadParams {
    pub fn init(
        store: &mut ParamStore,
        kind: HeadKind,
        hidden: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let sizes = [hidden, hidden, dim];
        let alpha = kind
            .has_alpha()
            .then(|| MlpParams::init(store, "head.alpha", &sizes, OutputActivation::Logistic, rng));
        let beta = kind
            .has_beta()
            .then(|| MlpParams::init(store, "head.beta", &sizes, OutputActivation::Logistic, rng));
        let synth = kind
            .has_synth()
            .then(|| MlpParams::init(store, "head.synth", &sizes, OutputActivation::Linear, rng));
        HeadParams {
            kind,
            alpha,
            beta,
            synth,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [&self.alpha, &self.beta, &self.synth]
            .into_iter()
            .flatten()
            .flat_map(MlpParams::param_ids)
            .collect()
    }
}

/// Per-frame intermediate values of the adaptive head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisFrameOutput {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub interp: Vec<f64>,
    pub synth: Vec<f64>,
    pub pred: Vec<f64>,
}

/// Learned interpolation, written `prev + alpha (next - prev)` so that equal
/// neighbours reproduce the keypose exactly for any `alpha`.
pub fn interp_path(alpha: &[f64], prev: &[f64], next: &[f64]) -> Vec<f64> {
    alpha
        .iter()
        .zip(prev.iter().zip(next))
        .map(|(a, (p, n))| p + a * (n - p))
        .collect()
}

/// `(1 - beta) * interp + beta * synth`, elementwise.
pub fn gate_blend(beta: &[f64], interp: &[f64], synth: &[f64]) -> Vec<f64> {
    beta.iter()
        .zip(interp.iter().zip(synth))
        .map(|(b, (i, s))| (1.0 - b) * i + b * s)
        .collect()
}

fn check_widths(parts: &[(&str, usize)], dim: usize) -> Result<()> {
    for (name, w) in parts {
        if *w != dim {
            return Err(Error::Shape(format!("{name} has width {w}, expected {dim}")));
        }
    }
    Ok(())
}

/// Combines already-computed gates and paths into the head output.
pub fn ais_combine(
    alpha: &[f64],
    beta: &[f64],
    prev: &[f64],
    next: &[f64],
    synth: &[f64],
) -> Result<AisFrameOutput> {
    let d = prev.len();
    check_widths(
        &[("alpha", alpha.len()), ("beta", beta.len()), ("next", next.len()), ("synth", synth.len())],
        d,
    )?;
    let interp = interp_path(alpha, prev, next);
    let pred = gate_blend(beta, &interp, synth);
    Ok(AisFrameOutput {
        alpha: alpha.to_vec(),
        beta: beta.to_vec(),
        interp,
        synth: synth.to_vec(),
        pred,
    })
}

/// Single-frame adaptive head from a hidden state.
pub fn ais_forward(
    hidden: &[f64],
    prev: &[f64],
    next: &[f64],
    store: &ParamStore,
    head: &HeadParams,
) -> Result<AisFrameOutput> {
    let (Some(a), Some(b), Some(s)) = (&head.alpha, &head.beta, &head.synth) else {
        return Err(Error::Config(format!("{} head has no gate MLPs", head.kind)));
    };
    let alpha = mlp_forward(hidden, store, a)?;
    let beta = mlp_forward(hidden, store, b)?;
    let synth = mlp_forward(hidden, store, s)?;
    ais_combine(&alpha, &beta, prev, next, &synth)
}

/// Output of a fixed interpolation, plus controllers that fell back to the
/// linear 6D blend.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedInterp {
    pub pose: Vec<f64>,
    pub degenerate: Vec<String>,
}

/// Time-proportional coefficient `(t - l) / (r - l)`, 0 when `r == l`.
pub fn time_fraction(t: usize, l: usize, r: usize) -> f64 {
    if r == l {
        0.0
    } else {
        (t - l) as f64 / (r - l) as f64
    }
}

pub fn fixed_interp(
    kind: FixedInterpKind,
    prev: &[f64],
    next: &[f64],
    t: usize,
    l: usize,
    r: usize,
    spec: &CharacterSpec,
) -> Result<FixedInterp> {
    let d = spec.dim();
    check_widths(&[("prev", prev.len()), ("next", next.len())], d)?;
    if !(l <= t && t <= r) {
        return Err(Error::ScheduleMismatch(format!("frame {t} not within [{l}, {r}]")));
    }
    let u = time_fraction(t, l, r);
    let mut degenerate = Vec::new();
    let pose = match kind {
        FixedInterpKind::Previous => prev.to_vec(),
        FixedInterpKind::Linear6d => lerp(prev, next, u),
        FixedInterpKind::Slerp => {
            let mut pose = lerp(prev, next, u);
            for c in spec.rotations() {
                let ch = c.channels();
                if u == 0.0 {
                    pose[ch.clone()].copy_from_slice(&prev[ch]);
                    continue;
                }
                if u == 1.0 {
                    pose[ch.clone()].copy_from_slice(&next[ch]);
                    continue;
                }
                match slerp_6d(&prev[ch.clone()], &next[ch.clone()], u) {
                    Some(v) => pose[ch].copy_from_slice(&v),
                    None => degenerate.push(c.name.clone()),
                }
            }
            pose
        }
    };
    Ok(FixedInterp { pose, degenerate })
}

fn lerp(a: &[f64], b: &[f64], u: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + u * (y - x)).collect()
}

/// Geodesic blend of two 6D rotations; `None` when the endpoints are
/// degenerate or half a turn apart (no unique shortest arc).
fn slerp_6d(a: &[f64], b: &[f64], u: f64) -> Option<[f64; 6]> {
    let ra = sixd_to_rotmatrix(a.try_into().ok()?).ok()?;
    let rb = sixd_to_rotmatrix(b.try_into().ok()?).ok()?;
    let qa = Quat::from_matrix(&ra);
    let qb = Quat::from_matrix(&rb);
    if qa.dot(&qb).abs() < 1e-8 {
        return None;
    }
    rotmatrix_to_6d(&qa.slerp(&qb, u).normalized().to_matrix()).ok()
}

/// Frame-level inputs for [`head_forward`].
pub struct FrameContext<'a> {
    pub prev: &'a [f64],
    pub next: &'a [f64],
    pub t: usize,
    pub l: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub pred: Vec<f64>,
    pub ais: Option<AisFrameOutput>,
}

/// Single-frame forward for any head variant.
pub fn head_forward(
    hidden: &[f64],
    ctx: &FrameContext<'_>,
    store: &ParamStore,
    head: &HeadParams,
    spec: &CharacterSpec,
) -> Result<HeadOutput> {
    let run = |m: &Option<MlpParams>| -> Result<Vec<f64>> {
        mlp_forward(hidden, store, m.as_ref().expect("head has the MLP its kind requires"))
    };
    let pred = match head.kind {
        HeadKind::Ais => {
            let out = ais_forward(hidden, ctx.prev, ctx.next, store, head)?;
            return Ok(HeadOutput {
                pred: out.pred.clone(),
                ais: Some(out),
            });
        }
        HeadKind::DirectSynthesis => run(&head.synth)?,
        HeadKind::SlerpOffset | HeadKind::Linear6dOffset | HeadKind::PreviousOffset => {
            let kind = head.kind.fixed_interp().expect("offset head");
            let base = fixed_interp(kind, ctx.prev, ctx.next, ctx.t, ctx.l, ctx.r, spec)?.pose;
            let offset = run(&head.synth)?;
            base.iter().zip(&offset).map(|(a, b)| a + b).collect()
        }
        HeadKind::InterpOnly => interp_path(&run(&head.alpha)?, ctx.prev, ctx.next),
        HeadKind::InterpOffset => {
            let interp = interp_path(&run(&head.alpha)?, ctx.prev, ctx.next);
            interp.iter().zip(run(&head.synth)?).map(|(a, b)| a + b).collect()
        }
        HeadKind::FixedGate => {
            let interp = interp_path(&run(&head.alpha)?, ctx.prev, ctx.next);
            interp
                .iter()
                .zip(run(&head.synth)?)
                .map(|(a, b)| 0.5 * a + 0.5 * b)
                .collect()
        }
    };
    Ok(HeadOutput { pred, ais: None })
}

/// Tape nodes produced by [`head_graph`].
pub struct HeadVars {
    pub pred: Var,
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
}

/// Batched head on the tape. `hidden` is `M x H`, `prev`/`next` (and `fixed`
/// for offset heads) are `M x D` constants.
pub fn head_graph(
    g: &mut Graph,
    store: &ParamStore,
    head: &HeadParams,
    hidden: Var,
    prev: Var,
    next: Var,
    fixed: Option<Var>,
) -> Result<HeadVars> {
    let run = |g: &mut Graph, m: &Option<MlpParams>| -> Result<Var> {
        m.as_ref()
            .expect("head has the MLP its kind requires")
            .forward_graph(g, store, hidden)
    };
    let interp = |g: &mut Graph, alpha: Var| -> Result<Var> {
        let span = g.sub(next, prev)?;
        let step = g.mul(alpha, span)?;
        g.add(prev, step)
    };
    let mut alpha_v = None;
    let mut beta_v = None;
    let pred = match head.kind {
        HeadKind::Ais => {
            let alpha = run(g, &head.alpha)?;
            let ip = interp(g, alpha)?;
            let synth = run(g, &head.synth)?;
            let beta = run(g, &head.beta)?;
            let keep = g.one_minus(beta);
            let a = g.mul(keep, ip)?;
            let b = g.mul(beta, synth)?;
            alpha_v = Some(alpha);
            beta_v = Some(beta);
            g.add(a, b)?
        }
        HeadKind::DirectSynthesis => run(g, &head.synth)?,
        HeadKind::SlerpOffset | HeadKind::Linear6dOffset | HeadKind::PreviousOffset => {
            let base = fixed.ok_or_else(|| Error::Config("offset head needs fixed interpolation".into()))?;
            let offset = run(g, &head.synth)?;
            g.add(base, offset)?
        }
        HeadKind::InterpOnly => {
            let alpha = run(g, &head.alpha)?;
            alpha_v = Some(alpha);
            interp(g, alpha)?
        }
        HeadKind::InterpOffset => {
            let alpha = run(g, &head.alpha)?;
            alpha_v = Some(alpha);
            let ip = interp(g, alpha)?;
            let synth = run(g, &head.synth)?;
            g.add(ip, synth)?
        }
        HeadKind::FixedGate => {
            let alpha = run(g, &head.alpha)?;
            alpha_v = Some(alpha);
            let ip = interp(g, alpha)?;
            let synth = run(g, &head.synth)?;
            let a = g.scale(ip, 0.5);
            let b = g.scale(synth, 0.5);
            g.add(a, b)?
        }
    };
    Ok(HeadVars {
        pred,
        alpha: alpha_v,
        beta: beta_v,
    })
}

/// Channel kinds are needed by callers that build fixed interpolations in
/// bulk; re-exported here for convenience.
pub fn is_rotation_channel(spec: &CharacterSpec, d: usize) -> bool {
    spec.channel_kinds()[d] == ControllerKind::Rotate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::Mat3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn rot_spec() -> CharacterSpec {
        CharacterSpec::new([("root", ControllerKind::Translate), ("neck", ControllerKind::Rotate)]).unwrap()
    }

    fn pose(t: [f64; 3], r: &Mat3) -> Vec<f64> {
        let mut p = t.to_vec();
        p.extend_from_slice(&rotmatrix_to_6d(r).unwrap());
        p
    }

    #[test]
    fn equal_neighbours_reproduce_keypose() {
        let p = [0.3, -1.7, 2.25];
        for a in [0.0, 0.13, 0.5, 0.999] {
            assert_eq!(interp_path(&[a; 3], &p, &p), p.to_vec());
        }
    }

    #[test]
    fn worked_blend_example() {
        let out = ais_combine(&[0.25, 0.5], &[0.1, 1.0], &[0.0, 2.0], &[4.0, 2.0], &[10.0, 0.0]).unwrap();
        assert_eq!(out.interp, vec![1.0, 2.0]);
        assert!((out.pred[0] - 1.9).abs() < 1e-12);
        assert_eq!(out.pred[1], 0.0);
    }

    #[test]
    fn gate_endpoints_select_paths_exactly() {
        let interp = [0.37, -2.0, 5.5];
        let synth = [1.1, 0.3, -0.7];
        assert_eq!(gate_blend(&[0.0; 3], &interp, &synth), interp.to_vec());
        assert_eq!(gate_blend(&[1.0; 3], &interp, &synth), synth.to_vec());
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        assert!(matches!(
            ais_combine(&[0.5], &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn previous_interp_copies_prev() {
        let spec = rot_spec();
        let a = pose([1.0, 2.0, 3.0], &Mat3::IDENTITY);
        let b = pose([4.0, 5.0, 6.0], &Mat3::rot_z(1.0));
        let out = fixed_interp(FixedInterpKind::Previous, &a, &b, 3, 1, 5, &spec).unwrap();
        assert_eq!(out.pose, a);
    }

    #[test]
    fn slerp_midpoint_is_eighth_turn() {
        let spec = rot_spec();
        let a = pose([0.0, 0.0, 0.0], &Mat3::IDENTITY);
        let b = pose([2.0, 0.0, -2.0], &Mat3::rot_z(FRAC_PI_2));
        let out = fixed_interp(FixedInterpKind::Slerp, &a, &b, 2, 0, 4, &spec).unwrap();
        assert_eq!(&out.pose[..3], &[1.0, 0.0, -1.0]);
        let r = sixd_to_rotmatrix(out.pose[3..9].try_into().unwrap()).unwrap();
        assert!(r.max_abs_diff(&Mat3::rot_z(FRAC_PI_4)) < 1e-9);
        assert!(out.degenerate.is_empty());
    }

    #[test]
    fn linear6d_midpoint_decodes_to_eighth_turn() {
        let spec = rot_spec();
        let a = pose([0.0; 3], &Mat3::IDENTITY);
        let b = pose([0.0; 3], &Mat3::rot_z(FRAC_PI_2));
        let out = fixed_interp(FixedInterpKind::Linear6d, &a, &b, 1, 0, 2, &spec).unwrap();
        let r = sixd_to_rotmatrix(out.pose[3..9].try_into().unwrap()).unwrap();
        assert!(r.max_abs_diff(&Mat3::rot_z(FRAC_PI_4)) < 1e-9);
    }

    #[test]
    fn slerp_endpoints_are_exact() {
        let spec = rot_spec();
        let a = pose([0.0; 3], &Mat3::from_axis_angle([1.0, 2.0, 0.5], 0.7));
        let b = pose([1.0; 3], &Mat3::from_axis_angle([-1.0, 0.2, 0.5], 2.1));
        let at_l = fixed_interp(FixedInterpKind::Slerp, &a, &b, 3, 3, 9, &spec).unwrap();
        let at_r = fixed_interp(FixedInterpKind::Slerp, &a, &b, 9, 3, 9, &spec).unwrap();
        assert_eq!(at_l.pose, a);
        assert_eq!(at_r.pose, b);
    }

    #[test]
    fn half_turn_slerp_falls_back_and_flags() {
        let spec = rot_spec();
        let a = pose([0.0; 3], &Mat3::IDENTITY);
        let b = pose([0.0; 3], &Mat3::from_axis_angle([1.0, 0.0, 0.0], std::f64::consts::PI));
        let out = fixed_interp(FixedInterpKind::Slerp, &a, &b, 1, 0, 2, &spec).unwrap();
        assert_eq!(out.degenerate, vec!["neck".to_string()]);
        assert_eq!(out.pose, lerp(&a, &b, 0.5));
    }

    fn heads_with(kind: HeadKind, seed: u64) -> (ParamStore, HeadParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let head = HeadParams::init(&mut store, kind, 6, 3, &mut rng);
        (store, head)
    }

    #[test]
    fn fixed_gate_is_mean_of_paths() {
        let interp = [2.0, 0.0];
        let synth = [0.0, 2.0];
        let v: Vec<f64> = interp.iter().zip(synth).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        assert_eq!(v, vec![1.0, 1.0]);

        let (store, head) = heads_with(HeadKind::FixedGate, 4);
        let h = [0.1, -0.4, 0.9, 0.3, 0.0, -0.2];
        let ctx = FrameContext { prev: &[0.0, 1.0, 2.0], next: &[1.0, 1.0, -1.0], t: 2, l: 0, r: 5 };
        let out = head_forward(&h, &ctx, &store, &head, &CharacterSpec::new([("x", ControllerKind::Translate)]).unwrap()).unwrap();
        let alpha = mlp_forward(&h, &store, head.alpha.as_ref().unwrap()).unwrap();
        let ip = interp_path(&alpha, ctx.prev, ctx.next);
        let synth = mlp_forward(&h, &store, head.synth.as_ref().unwrap()).unwrap();
        for d in 0..3 {
            assert_eq!(out.pred[d], 0.5 * ip[d] + 0.5 * synth[d]);
        }
    }

    #[test]
    fn previous_offset_with_zero_synth_is_prev() {
        let (mut store, head) = heads_with(HeadKind::PreviousOffset, 5);
        for id in head.param_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let spec = CharacterSpec::new([("x", ControllerKind::Translate)]).unwrap();
        let ctx = FrameContext { prev: &[0.5, -1.0, 3.0], next: &[1.0, 1.0, 1.0], t: 1, l: 0, r: 2 };
        let out = head_forward(&[0.2; 6], &ctx, &store, &head, &spec).unwrap();
        assert_eq!(out.pred, ctx.prev.to_vec());
    }

    #[test]
    fn interp_offset_with_zero_synth_matches_interp_only() {
        let (mut store, head) = heads_with(HeadKind::InterpOffset, 6);
        let synth = head.synth.as_ref().unwrap();
        for id in synth.param_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let only = HeadParams { kind: HeadKind::InterpOnly, alpha: head.alpha.clone(), beta: None, synth: None };
        let spec = CharacterSpec::new([("x", ControllerKind::Translate)]).unwrap();
        let ctx = FrameContext { prev: &[0.5, -1.0, 3.0], next: &[1.0, 1.0, 1.0], t: 1, l: 0, r: 2 };
        let h = [0.3, 0.1, -0.5, 0.8, 0.2, -0.9];
        let a = head_forward(&h, &ctx, &store, &head, &spec).unwrap();
        let b = head_forward(&h, &ctx, &store, &only, &spec).unwrap();
        assert_eq!(a.pred, b.pred);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in HeadKind::ALL {
            assert_eq!(HeadKind::parse(k.name()).unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!(HeadKind::parse("transformer").is_err());
    }
}
