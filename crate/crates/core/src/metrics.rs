//! Evaluation metrics: shift-tolerant L1, normalized power spectrum
//! similarity and plain per-frame L1.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{CharacterSpec, MotionSequence};
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerMetrics {
    pub stl1: f64,
    pub npss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub stl1: f64,
    pub npss: f64,
    pub plain_l1: f64,
    pub per_controller: BTreeMap<String, ControllerMetrics>,
}

/// Best shift found for one keypose segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentShift {
    pub start: usize,
    pub len: usize,
    pub delta: i64,
    pub cost: f64,
}

fn check_pair(gt: &MotionSequence, pred: &MotionSequence) -> Result<()> {
    if gt.num_frames() != pred.num_frames() || gt.dim() != pred.dim() {
        return Err(Error::Shape(format!(
            "ground truth is {}x{}, prediction is {}x{}",
            gt.num_frames(),
            gt.dim(),
            pred.num_frames(),
            pred.dim()
        )));
    }
    Ok(())
}

fn frame_l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Per-segment minimum shifted L1 costs.
pub fn stl1_segments(gt: &MotionSequence, pred: &MotionSequence, sched: &Schedule) -> Result<Vec<SegmentShift>> {
    check_pair(gt, pred)?;
    let n = gt.num_frames();
    sched.check_length(n)?;
    let mut out = Vec::with_capacity(sched.keypose_count().saturating_sub(1));
    for pair in sched.indices().windows(2) {
        let (k, len) = (pair[0], pair[1] - pair[0]);
        let lo = -(len.min(k) as i64);
        let hi = (len as i64).min((n - k - len) as i64);
        let mut best: Option<(i64, f64)> = None;
        // Candidates in tie-break order 0, -1, +1, -2, +2, ...; only strict
        // improvements replace the incumbent.
        let order = std::iter::once(0).chain((1..=len as i64).flat_map(|m| [-m, m]));
        for delta in order.filter(|d| (lo..=hi).contains(d)) {
            let s = (k as i64 + delta) as usize;
            let cost: f64 = (0..len).map(|j| frame_l1(gt.frame(k + j), pred.frame(s + j))).sum();
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((delta, cost));
            }
        }
        let (delta, cost) = best.expect("delta 0 is always admissible");
        out.push(SegmentShift {
            start: k,
            len,
            delta,
            cost,
        });
    }
    Ok(out)
}

/// Shift-tolerant L1: each keypose segment of the ground truth is matched
/// against the prediction at its best temporal offset.
pub fn stl1(gt: &MotionSequence, pred: &MotionSequence, sched: &Schedule) -> Result<f64> {
    let segs = stl1_segments(gt, pred, sched)?;
    Ok(segs.iter().map(|s| s.cost).sum::<f64>() / gt.num_frames() as f64)
}

/// Mean over frames of the per-frame L1 distance.
pub fn plain_l1(gt: &MotionSequence, pred: &MotionSequence) -> Result<f64> {
    check_pair(gt, pred)?;
    let n = gt.num_frames();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..n).map(|t| frame_l1(gt.frame(t), pred.frame(t))).sum();
    Ok(total / n as f64)
}

/// Power spectrum of one channel without the DC bin (bins `1..=N/2`).
pub fn power_spectrum(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// 1-Wasserstein distance between two spectra over bin index, each
/// normalized to unit mass. Two empty spectra are at distance 0; a single
/// empty spectrum is compared as if it were flat.
pub fn spectral_distance(a: &[f64], b: &[f64]) -> f64 {
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if sa == 0.0 && sb == 0.0 {
        return 0.0;
    }
    let flat = 1.0 / a.len() as f64;
    let (mut ca, mut cb, mut dist) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += if sa == 0.0 { flat } else { x / sa };
        cb += if sb == 0.0 { flat } else { y / sb };
        dist += (ca - cb).abs();
    }
    dist
}

pub fn npss(gt: &MotionSequence, pred: &MotionSequence) -> Result<f64> {
    check_pair(gt, pred)?;
    npss_channels(gt, pred, 0..gt.dim())
}

fn npss_channels(gt: &MotionSequence, pred: &MotionSequence, channels: std::ops::Range<usize>) -> Result<f64> {
    let n = gt.num_frames();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    let mut powers = Vec::with_capacity(channels.len());
    let mut dists = Vec::with_capacity(channels.len());
    for d in channels {
        let g = power_spectrum(&gt.channel(d));
        let p = power_spectrum(&pred.channel(d));
        powers.push(g.iter().sum::<f64>());
        dists.push(spectral_distance(&g, &p));
    }
    let total: f64 = powers.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(powers.iter().zip(&dists).map(|(p, d)| p / total * d).sum())
}

/// All metrics plus a breakdown per continuous controller.
pub fn metric_report(
    spec: &CharacterSpec,
    gt: &MotionSequence,
    pred: &MotionSequence,
    sched: &Schedule,
) -> Result<MetricReport> {
    check_pair(gt, pred)?;
    if gt.dim() != spec.dim() {
        return Err(Error::SpecMismatch(format!(
            "sequence width {} does not match character width {}",
            gt.dim(),
            spec.dim()
        )));
    }
    let mut per_controller = BTreeMap::new();
    for c in spec.continuous() {
        let g = gt.select_channels(c.channels());
        let p = pred.select_channels(c.channels());
        per_controller.insert(
            c.name.clone(),
            ControllerMetrics {
                stl1: stl1(&g, &p, sched)?,
                npss: npss_channels(gt, pred, c.channels())?,
            },
        );
    }
    Ok(MetricReport {
        stl1: stl1(gt, pred, sched)?,
        npss: npss(gt, pred)?,
        plain_l1: plain_l1(gt, pred)?,
        per_controller,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Provenance;

    fn ch(v: &[f64]) -> MotionSequence {
        MotionSequence::from_channel(v).unwrap()
    }

    #[test]
    fn worked_shift_example() {
        let gt = ch(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let pred = ch(&[0.0, 1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let sched = Schedule::new(vec![0, 3, 7], 8, Provenance::User).unwrap();
        let segs = stl1_segments(&gt, &pred, &sched).unwrap();
        assert_eq!((segs[0].delta, segs[0].cost), (0, 0.0));
        assert_eq!((segs[1].delta, segs[1].cost), (1, 1.0));
        assert_eq!(stl1(&gt, &pred, &sched).unwrap(), 0.125);
        assert_eq!(plain_l1(&gt, &pred).unwrap(), 0.5);
    }

    #[test]
    fn ties_prefer_small_then_negative_shift() {
        // Constant prediction: every shift costs the same.
        let gt = ch(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let pred = ch(&[0.0; 6]);
        let sched = Schedule::new(vec![0, 2, 5], 6, Provenance::User).unwrap();
        let segs = stl1_segments(&gt, &pred, &sched).unwrap();
        assert!(segs.iter().all(|s| s.delta == 0));

        // Shifts -1 and +1 both match exactly; -1 wins.
        let gt = ch(&[0.0, 0.0, 5.0, 0.0, 0.0]);
        let pred = ch(&[0.0, 5.0, 0.0, 5.0, 0.0]);
        let sched = Schedule::new(vec![0, 2, 3, 4], 5, Provenance::User).unwrap();
        let segs = stl1_segments(&gt, &pred, &sched).unwrap();
        assert_eq!((segs[1].delta, segs[1].cost), (-1, 0.0));
    }

    #[test]
    fn plain_l1_single_frame() {
        let gt = ch(&[0.0; 8]);
        let mut v = [0.0; 8];
        v[5] = 1.0;
        assert_eq!(plain_l1(&gt, &ch(&v)).unwrap(), 0.125);
        assert_eq!(plain_l1(&ch(&v), &gt).unwrap(), 0.125);
    }

    #[test]
    fn npss_two_sinusoids() {
        let n = 64;
        let sin = |bin: f64| -> Vec<f64> {
            (0..n)
                .map(|t| (2.0 * std::f64::consts::PI * bin * t as f64 / n as f64).sin())
                .collect()
        };
        let v = npss(&ch(&sin(4.0)), &ch(&sin(8.0))).unwrap();
        assert!((v - 4.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn npss_ignores_offsets_and_identity() {
        let x: Vec<f64> = (0..32).map(|t| ((t * t) % 7) as f64 * 0.3).collect();
        let shifted: Vec<f64> = x.iter().map(|v| v + 12.5).collect();
        assert_eq!(npss(&ch(&x), &ch(&x)).unwrap(), 0.0);
        assert!(npss(&ch(&x), &ch(&shifted)).unwrap() < 1e-12);
    }

    #[test]
    fn npss_rejects_short_and_zero_power_is_zero() {
        assert!(matches!(npss(&ch(&[1.0; 3]), &ch(&[1.0; 3])), Err(Error::TooShort { .. })));
        assert_eq!(npss(&ch(&[2.0; 8]), &ch(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let sched = Schedule::endpoints(4, Provenance::User).unwrap();
        assert!(matches!(stl1(&ch(&[0.0; 4]), &ch(&[0.0; 5]), &sched), Err(Error::Shape(_))));
        assert!(plain_l1(&ch(&[0.0; 4]), &ch(&[0.0; 5])).is_err());
    }
}
