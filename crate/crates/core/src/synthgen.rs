//! Procedural keyframe-style datasets: held poses joined by snappy
//! transitions with optional anticipation, overshoot and cycles.
//!
//! Every sequence is driven by one timeline of holds and moves shared by all
//! controllers. During a hold nothing moves; during a move a random subset of
//! controllers travels to new targets along a common progress profile. The
//! first and last frame of every hold form the ground-truth block schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{CharacterSpec, ControllerKind, MotionSequence};
use crate::rotation::{rotmatrix_to_6d, Quat};
use crate::schedule::{Provenance, Schedule};

pub const DEFAULT_FRAMES: usize = 96;
pub const DEFAULT_COUNT: usize = 300;
pub const DEFAULT_FPS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleParams {
    /// Inclusive frame count range of a hold.
    pub hold_len: (usize, usize),
    /// Inclusive range of frames a snap takes to reach its target; 1 is a step.
    pub snap_len: (usize, usize),
    pub p_overshoot: f64,
    /// Peak excess past the target as a fraction of the transition amplitude.
    pub overshoot_magnitude: (f64, f64),
    pub p_anticipation: f64,
    /// Counter-directional dip as a fraction of the transition amplitude.
    pub anticipation_magnitude: (f64, f64),
    pub anticipation_len: (usize, usize),
    pub p_cycle: f64,
    pub cycle_period: (usize, usize),
    pub cycle_count: (usize, usize),
    /// Oscillation amplitude as a fraction of the half value range (radians
    /// for rotations).
    pub cycle_amplitude: (f64, f64),
    pub translate_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Rotation angle between consecutive held orientations, radians.
    pub rotation_step: (f64, f64),
    /// Probability that a given controller takes part in a move.
    pub p_controller_change: f64,
    pub discrete_states: i64,
    /// Probability that a discrete channel switches at the start of a hold.
    pub p_discrete_switch: f64,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            hold_len: (6, 16),
            snap_len: (1, 3),
            p_overshoot: 0.5,
            overshoot_magnitude: (0.1, 0.3),
            p_anticipation: 0.4,
            anticipation_magnitude: (0.05, 0.15),
            anticipation_len: (1, 2),
            p_cycle: 0.1,
            cycle_period: (6, 12),
            cycle_count: (1, 2),
            cycle_amplitude: (0.1, 0.3),
            translate_range: (-1.0, 1.0),
            scale_range: (0.8, 1.25),
            rotation_step: (0.3, 1.2),
            p_controller_change: 0.6,
            discrete_states: 4,
            p_discrete_switch: 0.3,
        }
    }
}

impl StyleParams {
    /// Holds joined by single-frame jumps and nothing else.
    pub fn pure_step() -> Self {
        StyleParams {
            snap_len: (1, 1),
            p_overshoot: 0.0,
            p_anticipation: 0.0,
            p_cycle: 0.0,
            ..StyleParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_overshoot", self.p_overshoot),
            ("p_anticipation", self.p_anticipation),
            ("p_cycle", self.p_cycle),
            ("p_controller_change", self.p_controller_change),
            ("p_discrete_switch", self.p_discrete_switch),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        let counts = [
            ("hold_len", self.hold_len, 2),
            ("snap_len", self.snap_len, 1),
            ("anticipation_len", self.anticipation_len, 1),
            ("cycle_period", self.cycle_period, 2),
            ("cycle_count", self.cycle_count, 1),
        ];
        for (name, (lo, hi), min) in counts {
            if lo < min || lo > hi {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is invalid (minimum {min})")));
            }
        }
        let spans = [
            ("overshoot_magnitude", self.overshoot_magnitude, true),
            ("anticipation_magnitude", self.anticipation_magnitude, true),
            ("cycle_amplitude", self.cycle_amplitude, true),
            ("rotation_step", self.rotation_step, true),
            ("translate_range", self.translate_range, false),
            ("scale_range", self.scale_range, false),
        ];
        for (name, (lo, hi), positive) in spans {
            let ok = lo.is_finite() && hi.is_finite() && lo <= hi && (!positive || lo >= 0.0);
            if !ok || (!positive && lo == hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if self.discrete_states < 1 {
            return Err(Error::Config("discrete_states must be at least 1".into()));
        }
        Ok(())
    }
}

/// One transition between consecutive holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveEvent {
    /// First frame after the previous hold.
    pub start: usize,
    /// Progress towards the target for each in-between frame; may leave
    /// `[0, 1]` for anticipation and overshoot.
    pub profile: Vec<f64>,
    /// Cycle oscillation per in-between frame (all zero for plain moves).
    pub oscillation: Vec<f64>,
    pub overshoot: Option<f64>,
    pub anticipation: Option<f64>,
    pub cycle: bool,
}

impl MoveEvent {
    /// Frames strictly between the two holds.
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.profile.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub n: usize,
    /// Inclusive `(first, last)` frame of each hold, clipped to the sequence.
    pub holds: Vec<(usize, usize)>,
    /// `moves[i]` comes right after `holds[i]`.
    pub moves: Vec<MoveEvent>,
}

impl Timeline {
    /// Hold boundaries plus both sequence endpoints.
    pub fn block_schedule(&self) -> Result<Schedule> {
        let mut idx = vec![0, self.n - 1];
        for &(a, b) in &self.holds {
            idx.push(a);
            idx.push(b);
        }
        Schedule::from_candidates(idx, self.n, Provenance::User)
    }
}

fn sample_usize(rng: &mut impl Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn sample_f64(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

fn build_move(style: &StyleParams, start: usize, rng: &mut impl Rng) -> MoveEvent {
    if rng.random_bool(style.p_cycle) {
        let period = sample_usize(rng, style.cycle_period);
        let len = period * sample_usize(rng, style.cycle_count);
        let profile = (1..len).map(|j| j as f64 / len as f64).collect();
        let oscillation = (1..len)
            .map(|j| (2.0 * std::f64::consts::PI * j as f64 / period as f64).sin())
            .collect();
        return MoveEvent {
            start,
            profile,
            oscillation,
            overshoot: None,
            anticipation: None,
            cycle: true,
        };
    }
    let mut profile = Vec::new();
    let anticipation = rng.random_bool(style.p_anticipation).then(|| {
        let dip = sample_f64(rng, style.anticipation_magnitude);
        let len = sample_usize(rng, style.anticipation_len);
        profile.extend((1..=len).map(|k| -dip * k as f64 / len as f64));
        dip
    });
    let snap = sample_usize(rng, style.snap_len);
    profile.extend((1..snap).map(|j| smoothstep(j as f64 / snap as f64)));
    let overshoot = rng.random_bool(style.p_overshoot).then(|| {
        let m = sample_f64(rng, style.overshoot_magnitude);
        profile.push(1.0 + m);
        profile.push(1.0 + 0.3 * m);
        m
    });
    let oscillation = vec![0.0; profile.len()];
    MoveEvent {
        start,
        profile,
        oscillation,
        overshoot,
        anticipation,
        cycle: false,
    }
}

pub fn build_timeline(style: &StyleParams, n: usize, rng: &mut impl Rng) -> Timeline {
    let mut holds = Vec::new();
    let mut moves = Vec::new();
    let mut t = 0;
    loop {
        let len = sample_usize(rng, style.hold_len);
        let end = (t + len).min(n);
        holds.push((t, end - 1));
        t = end;
        if t >= n {
            break;
        }
        let mv = build_move(style, t, rng);
        t += mv.profile.len();
        moves.push(mv);
        if t >= n {
            break;
        }
    }
    Timeline { n, holds, moves }
}

/// Target at least a tenth of the range away from `from`, when possible.
fn sample_target(rng: &mut impl Rng, range: (f64, f64), from: f64) -> f64 {
    let min_step = 0.1 * (range.1 - range.0);
    let mut b = sample_f64(rng, range);
    for _ in 0..16 {
        if (b - from).abs() >= min_step {
            break;
        }
        b = sample_f64(rng, range);
    }
    b
}

/// Per-move transition endpoints of one scalar channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: f64,
    pub to: f64,
}

fn scalar_track(
    timeline: &Timeline,
    moving: &[bool],
    range: (f64, f64),
    amplitude: f64,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<Transition>) {
    let mut out = vec![0.0; timeline.n];
    let mut value = sample_f64(rng, range);
    let mut transitions = Vec::with_capacity(timeline.moves.len());
    let half = 0.5 * (range.1 - range.0);
    for (i, &(a, b)) in timeline.holds.iter().enumerate() {
        out[a..=b].fill(value);
        let Some(mv) = timeline.moves.get(i) else { break };
        let from = value;
        let to = if moving[i] { sample_target(rng, range, from) } else { from };
        let amp = if moving[i] && mv.cycle { amplitude * half } else { 0.0 };
        for (j, t) in mv.frames().enumerate() {
            if t < timeline.n {
                out[t] = from + mv.profile[j] * (to - from) + amp * mv.oscillation[j];
            }
        }
        transitions.push(Transition { from, to });
        value = to;
    }
    (out, transitions)
}

fn random_axis(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn rotation_track(
    timeline: &Timeline,
    moving: &[bool],
    style: &StyleParams,
    rng: &mut impl Rng,
) -> Result<Vec<[f64; 6]>> {
    let encode = |q: &Quat| rotmatrix_to_6d(&q.normalized().to_matrix());
    let mut out = vec![[0.0; 6]; timeline.n];
    let mut q = Quat::from_axis_angle(random_axis(rng), rng.random_range(0.0..=std::f64::consts::FRAC_PI_2));
    let amplitude = sample_f64(rng, style.cycle_amplitude);
    let wobble_axis = random_axis(rng);
    for (i, &(a, b)) in timeline.holds.iter().enumerate() {
        out[a..=b].fill(encode(&q)?);
        let Some(mv) = timeline.moves.get(i) else { break };
        let target = if moving[i] {
            let step = Quat::from_axis_angle(random_axis(rng), sample_f64(rng, style.rotation_step));
            q.mul(&step).normalized()
        } else {
            q
        };
        for (j, t) in mv.frames().enumerate() {
            if t >= timeline.n {
                break;
            }
            let mut r = q.slerp(&target, mv.profile[j]);
            if moving[i] && mv.cycle {
                r = r.mul(&Quat::from_axis_angle(wobble_axis, amplitude * mv.oscillation[j]));
            }
            out[t] = encode(&r)?;
        }
        q = target;
    }
    Ok(out)
}

fn discrete_track(timeline: &Timeline, style: &StyleParams, rng: &mut impl Rng) -> Vec<i64> {
    let mut out = vec![0; timeline.n];
    let mut value = rng.random_range(0..style.discrete_states);
    for (i, &(a, b)) in timeline.holds.iter().enumerate() {
        if i > 0 && style.discrete_states > 1 && rng.random_bool(style.p_discrete_switch) {
            let next = rng.random_range(0..style.discrete_states - 1);
            value = if next >= value { next + 1 } else { next };
        }
        let end = timeline.moves.get(i).map_or(b + 1, |m| m.frames().end.min(timeline.n));
        out[a..end].fill(value);
    }
    out
}

/// A single scalar channel with its timeline and per-move endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrack {
    pub values: Vec<f64>,
    pub timeline: Timeline,
    pub transitions: Vec<Transition>,
    pub block_schedule: Schedule,
}

/// One translate-like channel where every move changes the value.
pub fn generate_channel(style: &StyleParams, n: usize, seed: u64) -> Result<ChannelTrack> {
    style.validate()?;
    if n < 8 {
        return Err(Error::TooShort { needed: 8, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timeline = build_timeline(style, n, &mut rng);
    let moving = vec![true; timeline.moves.len()];
    let (values, transitions) = scalar_track(&timeline, &moving, style.translate_range, sample_f64(&mut rng, style.cycle_amplitude), &mut rng);
    let block_schedule = timeline.block_schedule()?;
    Ok(ChannelTrack {
        values,
        timeline,
        transitions,
        block_schedule,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: CharacterSpec,
    pub sequences: Vec<MotionSequence>,
    /// Ground-truth block schedule of each sequence.
    pub block_schedules: Vec<Schedule>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Rig used by the default synthetic dataset: 4 translate, 4 rotate and 1
/// scale controller (39 pose channels) plus 2 discrete switches.
pub fn default_character() -> CharacterSpec {
    use ControllerKind::*;
    CharacterSpec::new([
        ("root", Translate),
        ("hips", Rotate),
        ("chest", Rotate),
        ("head", Rotate),
        ("jaw", Rotate),
        ("hand_l", Translate),
        ("hand_r", Translate),
        ("look_at", Translate),
        ("body_scale", Scale),
        ("ik_fk", Discrete),
        ("visibility", Discrete),
    ])
    .expect("default character is valid")
}

fn sequence_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One sequence and its block schedule.
pub fn generate_sequence(
    spec: &CharacterSpec,
    style: &StyleParams,
    n: usize,
    seed: u64,
) -> Result<(MotionSequence, Schedule)> {
    style.validate()?;
    if n < 8 {
        return Err(Error::TooShort { needed: 8, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timeline = build_timeline(style, n, &mut rng);
    let continuous: Vec<_> = spec.continuous().cloned().collect();

    // moving[c][i]: controller c takes part in move i; at least one does.
    let mut moving = vec![vec![false; timeline.moves.len()]; continuous.len()];
    for i in 0..timeline.moves.len() {
        for row in moving.iter_mut() {
            row[i] = rng.random_bool(style.p_controller_change);
        }
        if moving.iter().all(|row| !row[i]) {
            moving[rng.random_range(0..continuous.len())][i] = true;
        }
    }

    let mut frames = vec![0.0; n * spec.dim()];
    for (c, ctrl) in continuous.iter().enumerate() {
        match ctrl.kind {
            ControllerKind::Translate | ControllerKind::Scale => {
                let range = if ctrl.kind == ControllerKind::Scale { style.scale_range } else { style.translate_range };
                for d in ctrl.channels() {
                    let amp = sample_f64(&mut rng, style.cycle_amplitude);
                    let (track, _) = scalar_track(&timeline, &moving[c], range, amp, &mut rng);
                    for (t, v) in track.into_iter().enumerate() {
                        frames[t * spec.dim() + d] = v;
                    }
                }
            }
            ControllerKind::Rotate => {
                let track = rotation_track(&timeline, &moving[c], style, &mut rng)?;
                let ch = ctrl.channels();
                for (t, r) in track.into_iter().enumerate() {
                    frames[t * spec.dim() + ch.start..t * spec.dim() + ch.end].copy_from_slice(&r);
                }
            }
            ControllerKind::Discrete => unreachable!("continuous controllers only"),
        }
    }

    let k = spec.discrete_count();
    let mut discrete = vec![0; n * k];
    for j in 0..k {
        for (t, v) in discrete_track(&timeline, style, &mut rng).into_iter().enumerate() {
            discrete[t * k + j] = v;
        }
    }
    let seq = MotionSequence::from_flat(frames, n, spec.dim(), discrete, k, DEFAULT_FPS)?;
    Ok((seq, timeline.block_schedule()?))
}

pub fn generate_dataset(
    spec: &CharacterSpec,
    style: &StyleParams,
    count: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    style.validate()?;
    let mut sequences = Vec::with_capacity(count);
    let mut block_schedules = Vec::with_capacity(count);
    for i in 0..count {
        let (seq, sched) = generate_sequence(spec, style, n, sequence_seed(seed, i))?;
        sequences.push(seq);
        block_schedules.push(sched);
    }
    Ok(Dataset {
        spec: spec.clone(),
        sequences,
        block_schedules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::sixd_to_rotmatrix;
    use crate::schedule::{dba_extract, DbaParams};

    #[test]
    fn pure_step_is_piecewise_constant() {
        let track = generate_channel(&StyleParams::pure_step(), 96, 3).unwrap();
        let v = &track.values;
        let jumps: Vec<usize> = (0..v.len() - 1).filter(|&t| v[t + 1] != v[t]).collect();
        let expected: Vec<usize> = track.timeline.holds.iter().skip(1).map(|&(a, _)| a - 1).collect();
        assert_eq!(jumps, expected);
        assert!(track.timeline.moves.iter().all(|m| m.profile.is_empty()));
    }

    #[test]
    fn seeded_determinism() {
        let style = StyleParams::default();
        assert_eq!(generate_channel(&style, 64, 9).unwrap(), generate_channel(&style, 64, 9).unwrap());
        let spec = default_character();
        let a = generate_dataset(&spec, &style, 3, 48, 1).unwrap();
        let b = generate_dataset(&spec, &style, 3, 48, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec, &style, 3, 48, 2).unwrap();
        assert_ne!(a.sequences, c.sequences);
    }

    #[test]
    fn default_character_width() {
        let spec = default_character();
        assert_eq!(spec.dim(), 39);
        assert_eq!(spec.discrete_count(), 2);
        assert_eq!(spec.controllers()[0].name, "root");
    }

    #[test]
    fn rotations_decode_to_valid_frames() {
        let spec = default_character();
        let data = generate_dataset(&spec, &StyleParams::default(), 4, 96, 11).unwrap();
        for seq in &data.sequences {
            for t in 0..seq.num_frames() {
                for c in spec.rotations() {
                    let six: [f64; 6] = seq.frame(t)[c.channels()].try_into().unwrap();
                    let r = sixd_to_rotmatrix(&six).unwrap();
                    assert!(r.orthonormality_error() < 1e-9);
                    assert!((r.determinant() - 1.0).abs() < 1e-9);
                    let back = rotmatrix_to_6d(&r).unwrap();
                    assert!(back.iter().zip(&six).all(|(a, b)| (a - b).abs() < 1e-9));
                }
            }
        }
    }

    #[test]
    fn pure_step_block_schedule_matches_extraction() {
        let spec = default_character();
        let data = generate_dataset(&spec, &StyleParams::pure_step(), 5, 96, 21).unwrap();
        for (seq, sched) in data.sequences.iter().zip(&data.block_schedules) {
            let found = dba_extract(seq, &DbaParams::default()).unwrap();
            assert_eq!(found.indices(), sched.indices());
        }
    }

    #[test]
    fn empty_dataset() {
        let data = generate_dataset(&default_character(), &StyleParams::default(), 0, 96, 0).unwrap();
        assert!(data.is_empty());
    }

    #[test]
    fn discrete_switches_only_at_hold_starts() {
        let spec = default_character();
        let (seq, sched) = generate_sequence(&spec, &StyleParams::default(), 96, 5).unwrap();
        let k = spec.discrete_count();
        for t in 1..seq.num_frames() {
            if seq.discrete_frame(t) != seq.discrete_frame(t - 1) {
                assert!(sched.contains(t), "switch at non-keypose frame {t}");
            }
        }
        assert!(seq.discrete().iter().all(|&v| (0..4).contains(&v)));
        assert_eq!(seq.discrete().len(), 96 * k);
    }

    #[test]
    fn invalid_style_rejected() {
        let style = StyleParams { p_cycle: 1.5, ..StyleParams::default() };
        assert!(generate_channel(&style, 32, 0).is_err());
        let style = StyleParams { hold_len: (1, 4), ..StyleParams::default() };
        assert!(style.validate().is_err());
        assert!(matches!(generate_channel(&StyleParams::default(), 7, 0), Err(Error::TooShort { .. })));
    }
}
