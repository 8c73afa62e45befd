//! Keypose schedules: the domain-based extractor (multi-scale speed minima
//! plus held-span boundaries), schedule augmentation and random schedules.
//!
//! Every randomized routine draws from `ChaCha8Rng::seed_from_u64(seed)`, a
//! portable generator, so schedules reproduce bit-for-bit across platforms.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::MotionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Dba,
    DbaAugmented,
    Random,
    User,
}

/// Strictly increasing keypose frames containing both endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct Schedule {
    indices: Vec<usize>,
    n: usize,
    provenance: Provenance,
}

/// On-disk form: `{"n": int, "indices": [int], "provenance": string}`.
#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    n: usize,
    indices: Vec<usize>,
    provenance: Provenance,
}

impl TryFrom<ScheduleFile> for Schedule {
    type Error = Error;
    fn try_from(f: ScheduleFile) -> Result<Self> {
        Schedule::new(f.indices, f.n, f.provenance)
    }
}

impl From<Schedule> for ScheduleFile {
    fn from(s: Schedule) -> Self {
        ScheduleFile {
            n: s.n,
            indices: s.indices,
            provenance: s.provenance,
        }
    }
}

impl Schedule {
    pub fn new(indices: Vec<usize>, n: usize, provenance: Provenance) -> Result<Self> {
        if n < 2 {
            return Err(Error::ScheduleMismatch(format!(
                "schedule length {n} is below 2 frames"
            )));
        }
        if indices.first() != Some(&0) {
            return Err(Error::ScheduleMismatch("first keypose must be frame 0".into()));
        }
        if indices.last() != Some(&(n - 1)) {
            return Err(Error::ScheduleMismatch(format!(
                "last keypose must be frame {}",
                n - 1
            )));
        }
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::ScheduleMismatch(format!(
                "keyposes not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Schedule {
            indices,
            n,
            provenance,
        })
    }

    /// Sorts and dedupes, then forces both endpoints in.
    pub fn from_candidates(
        mut candidates: Vec<usize>,
        n: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        candidates.retain(|&k| k < n);
        candidates.push(0);
        candidates.push(n.saturating_sub(1));
        candidates.sort_unstable();
        candidates.dedup();
        Schedule::new(candidates, n, provenance)
    }

    /// Endpoints only.
    pub fn endpoints(n: usize, provenance: Provenance) -> Result<Self> {
        Schedule::new(vec![0, n.saturating_sub(1)], n, provenance)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Sequence length `N`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn keypose_count(&self) -> usize {
        self.indices.len()
    }

    pub fn interior(&self) -> &[usize] {
        &self.indices[1..self.indices.len() - 1]
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }

    pub fn check_length(&self, n: usize) -> Result<()> {
        if self.n != n {
            return Err(Error::ScheduleMismatch(format!(
                "schedule covers {} frames, sequence has {n}",
                self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbaParams {
    /// Gaussian smoothing widths (standard deviations, in frames).
    pub gaussian_scales: Vec<f64>,
    pub min_separation: usize,
    /// Raw per-step L1 speed below which a step counts as held.
    pub hold_epsilon: f64,
}

impl Default for DbaParams {
    fn default() -> Self {
        DbaParams {
            gaussian_scales: vec![1.0, 2.0, 4.0],
            min_separation: 2,
            hold_epsilon: 1e-6,
        }
    }
}

impl DbaParams {
    pub fn validate(&self) -> Result<()> {
        if self.gaussian_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("gaussian scales must be positive".into()));
        }
        if self.min_separation < 1 {
            return Err(Error::Config("min_separation must be at least 1".into()));
        }
        if !(self.hold_epsilon >= 0.0) {
            return Err(Error::Config("hold_epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Runs the extractor on a sequence in normalized units.
pub fn dba_extract(seq: &MotionSequence, params: &DbaParams) -> Result<Schedule> {
    if !seq.normalized {
        log::debug!("dba_extract on unnormalized data; hold_epsilon is in raw units");
    }
    dba_extract_frames(seq.frames(), seq.num_frames(), seq.dim(), params)
}

/// Extractor over a row-major `n x dim` buffer.
///
/// 1. speed `v[t] = |p[t+1] - p[t]|_1` for `t` in `0..n-1`;
/// 2. per scale, Gaussian-smooth `v` and collect local minima: maximal
///    plateaus of equal smoothed speed with strictly larger neighbours on
///    both sides, each contributing the frame of lowest raw speed it spans;
/// 3. every maximal run `[a, b]` of raw speed below `hold_epsilon` adds its
///    boundary frames `a` and `b + 1`;
/// 4. minima lying inside a held span, or closer than `min_separation` to a
///    held-span boundary or endpoint, are dropped; mutually close minima keep
///    the lower raw speed (ties to the earlier frame);
/// 5. endpoints forced in, sorted, deduped.
///
/// Held-span boundaries and endpoints are never merged away.
pub fn dba_extract_frames(
    frames: &[f64],
    n: usize,
    dim: usize,
    params: &DbaParams,
) -> Result<Schedule> {
    params.validate()?;
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    if frames.len() != n * dim {
        return Err(Error::Shape(format!(
            "buffer of {} values is not {n} x {dim}",
            frames.len()
        )));
    }
    let speed: Vec<f64> = (0..n - 1)
        .map(|t| {
            let a = &frames[t * dim..(t + 1) * dim];
            let b = &frames[(t + 1) * dim..(t + 2) * dim];
            a.iter().zip(b).map(|(x, y)| (y - x).abs()).sum()
        })
        .collect();
    let frame_speed = |f: usize| -> f64 {
        let left = f.checked_sub(1).map(|i| speed[i]);
        let right = speed.get(f).copied();
        match (left, right) {
            (Some(l), Some(r)) => 0.5 * (l + r),
            (Some(v), None) | (None, Some(v)) => v,
            (None, None) => 0.0,
        }
    };

    // (3) held spans, as closed frame ranges.
    let mut held: Vec<(usize, usize)> = Vec::new();
    let mut t = 0;
    while t < speed.len() {
        if speed[t] < params.hold_epsilon {
            let a = t;
            while t + 1 < speed.len() && speed[t + 1] < params.hold_epsilon {
                t += 1;
            }
            held.push((a, t + 1));
        }
        t += 1;
    }
    let mut anchors: Vec<usize> = vec![0, n - 1];
    for &(a, b) in &held {
        anchors.push(a);
        anchors.push(b);
    }
    anchors.sort_unstable();
    anchors.dedup();

    // (2) multi-scale minima.
    let mut minima: Vec<usize> = Vec::new();
    for &scale in &params.gaussian_scales {
        let smooth = gaussian_smooth(&speed, scale);
        for (a, b) in plateau_minima(&smooth) {
            let best = (a..=b + 1)
                .min_by(|&x, &y| frame_speed(x).total_cmp(&frame_speed(y)).then(x.cmp(&y)))
                .expect("plateau spans at least two frames");
            minima.push(best);
        }
    }
    minima.sort_unstable();
    minima.dedup();

    // (4) merge.
    let in_hold = |f: usize| held.iter().any(|&(a, b)| a <= f && f <= b);
    let near_anchor = |f: usize| {
        anchors
            .iter()
            .any(|&k| k.abs_diff(f) < params.min_separation)
    };
    let mut kept: Vec<usize> = Vec::new();
    for f in minima {
        if in_hold(f) || near_anchor(f) {
            continue;
        }
        match kept.last() {
            Some(&prev) if f - prev < params.min_separation => {
                // Strictly lower speed replaces; ties keep the earlier frame.
                if frame_speed(f) < frame_speed(prev) {
                    *kept.last_mut().expect("non-empty") = f;
                }
            }
            _ => kept.push(f),
        }
    }

    // (5)
    anchors.extend(kept);
    Schedule::from_candidates(anchors, n, Provenance::Dba)
}

/// Truncated (radius `ceil(3 sigma)`) normalized Gaussian with edge
/// replication.
pub fn gaussian_smooth(v: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let last = v.len() as isize - 1;
    (0..v.len() as isize)
        .map(|i| {
            weights
                .iter()
                .zip(-radius..=radius)
                .map(|(w, k)| w * v[(i + k).clamp(0, last) as usize])
                .sum::<f64>()
                / total
        })
        .collect()
}

/// Maximal plateaus `[a, b]` (values equal within 1e-12) whose left and
/// right neighbours both exist and are strictly larger.
fn plateau_minima(v: &[f64]) -> Vec<(usize, usize)> {
    const TIE: f64 = 1e-12;
    let mut out = Vec::new();
    let mut a = 0;
    while a < v.len() {
        let mut b = a;
        while b + 1 < v.len() && (v[b + 1] - v[a]).abs() <= TIE {
            b += 1;
        }
        if a > 0 && b + 1 < v.len() && v[a - 1] > v[a] + TIE && v[b + 1] > v[a] + TIE {
            out.push((a, b));
        }
        a = b + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub p_add: f64,
    pub p_remove: f64,
    pub global_shift_max: usize,
    pub local_jitter_max: usize,
    pub p_jitter: f64,
    pub level: u8,
}

impl AugmentParams {
    /// Preset levels 0-3 of increasing probability and magnitude.
    pub fn level(level: u8) -> Result<Self> {
        let (p_add, p_remove, shift, jitter, p_jitter) = match level {
            0 => (0.0, 0.0, 0, 0, 0.0),
            1 => (0.05, 0.10, 1, 1, 0.10),
            2 => (0.10, 0.20, 2, 2, 0.20),
            3 => (0.20, 0.35, 3, 3, 0.35),
            _ => return Err(Error::Config(format!("augmentation level {level} not in 0..=3"))),
        };
        Ok(AugmentParams {
            p_add,
            p_remove,
            global_shift_max: shift,
            local_jitter_max: jitter,
            p_jitter,
            level,
        })
    }

    /// True when no pass can change the schedule.
    pub fn is_identity(&self) -> bool {
        self.p_add == 0.0
            && self.p_remove == 0.0
            && self.global_shift_max == 0
            && (self.p_jitter == 0.0 || self.local_jitter_max == 0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_add", self.p_add),
            ("p_remove", self.p_remove),
            ("p_jitter", self.p_jitter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Counts of what each randomized pass did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentTrace {
    pub removed: usize,
    pub added: usize,
    pub global_shift: i64,
    pub jittered: usize,
    pub collisions: usize,
}

pub fn augment_schedule(sched: &Schedule, params: &AugmentParams, seed: u64) -> Result<Schedule> {
    augment_schedule_traced(sched, params, seed).map(|(s, _)| s)
}

/// Remove, add, global shift, local jitter, in that order. Endpoints are
/// never touched; interior keyposes are clamped to `[1, N-2]` and collisions
/// collapse to one keypose.
pub fn augment_schedule_traced(
    sched: &Schedule,
    params: &AugmentParams,
    seed: u64,
) -> Result<(Schedule, AugmentTrace)> {
    params.validate()?;
    let n = sched.len();
    let mut trace = AugmentTrace::default();
    if n <= 2 || params.is_identity() {
        return Ok((sched.clone(), trace));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut interior: Vec<usize> = Vec::with_capacity(sched.interior().len());
    for &k in sched.interior() {
        if rng.random_bool(params.p_remove) {
            trace.removed += 1;
        } else {
            interior.push(k);
        }
    }

    let mut bounds = Vec::with_capacity(interior.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(&interior);
    bounds.push(n - 1);
    for w in bounds.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if rng.random_bool(params.p_add) && hi - lo >= 2 {
            interior.push(rng.random_range(lo + 1..hi));
            trace.added += 1;
        }
    }

    let g = params.global_shift_max as i64;
    trace.global_shift = rng.random_range(-g..=g);
    let j = params.local_jitter_max as i64;
    let max_interior = (n - 2) as i64;
    let mut shifted: Vec<usize> = interior
        .iter()
        .map(|&k| {
            let mut v = k as i64 + trace.global_shift;
            if rng.random_bool(params.p_jitter) {
                v += rng.random_range(-j..=j);
                trace.jittered += 1;
            }
            v.clamp(1, max_interior) as usize
        })
        .collect();
    shifted.sort_unstable();
    let before = shifted.len();
    shifted.dedup();
    trace.collisions = before - shifted.len();

    let sched = Schedule::from_candidates(shifted, n, Provenance::DbaAugmented)?;
    Ok((sched, trace))
}

/// Endpoints plus `round((1 - r)(N - 2))` interior frames drawn uniformly
/// without replacement.
pub fn random_schedule(n: usize, masked_ratio: f64, seed: u64) -> Result<Schedule> {
    if !(0.0..1.0).contains(&masked_ratio) {
        return Err(Error::InvalidRatio(masked_ratio));
    }
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let interior = n - 2;
    let keep = ((1.0 - masked_ratio) * interior as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = index::sample(&mut rng, interior, keep.min(interior))
        .into_iter()
        .map(|i| i + 1)
        .collect();
    Schedule::from_candidates(picks, n, Provenance::Random)
}
