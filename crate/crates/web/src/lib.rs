//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no glue beyond `JSON.parse`. The `*_demo` functions are also
//! callable natively, which is how the tests exercise them.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tweenforge::heads::ais_combine;
use tweenforge::metrics::{npss, plain_l1, stl1};
use tweenforge::schedule::{dba_extract, DbaParams};
use tweenforge::synthgen::{default_character, generate_sequence, StyleParams};
use tweenforge::{MotionSequence, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    /// Channel names of the plotted controller.
    pub names: Vec<String>,
    /// One curve per plotted channel.
    pub curves: Vec<Vec<f64>>,
    /// Per-step L1 speed over all continuous channels.
    pub speed: Vec<f64>,
    pub keyposes: Vec<usize>,
    /// Block boundaries the generator used.
    pub ground_truth: Vec<usize>,
}

fn sample(seed: u64, frames: usize, pure_step: bool) -> Result<(MotionSequence, tweenforge::Schedule)> {
    let style = if pure_step {
        StyleParams::pure_step()
    } else {
        StyleParams::default()
    };
    generate_sequence(&default_character(), &style, frames, seed)
}

/// Generates a synthetic sequence and runs keypose extraction on it.
pub fn extract_demo(seed: u64, frames: usize, pure_step: bool, min_separation: usize, hold_epsilon: f64) -> Result<Extraction> {
    let (seq, truth) = sample(seed, frames, pure_step)?;
    let params = DbaParams {
        min_separation,
        hold_epsilon,
        ..DbaParams::default()
    };
    params.validate()?;
    let sched = dba_extract(&seq, &params)?;
    let speed = (0..seq.num_frames() - 1)
        .map(|t| seq.frame(t + 1).iter().zip(seq.frame(t)).map(|(a, b)| (a - b).abs()).sum())
        .collect();
    Ok(Extraction {
        names: ["root.x", "root.y", "root.z"].map(String::from).to_vec(),
        curves: (0..3).map(|c| seq.channel(c)).collect(),
        speed,
        keyposes: sched.indices().to_vec(),
        ground_truth: truth.indices().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Blend {
    pub interp: Vec<f64>,
    pub synth: Vec<f64>,
    pub pred: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// One channel between keyposes `prev` and `next` over `frames` frames.
/// `ease` bends the interpolation gate from linear (0) toward smoothstep (1);
/// `beta` is the constant synthesis gate. The synthesis path is a fixed
/// overshooting curve.
pub fn blend_demo(prev: f64, next: f64, frames: usize, ease: f64, beta: f64) -> Result<Blend> {
    if frames < 2 {
        return Err(tweenforge::Error::TooShort { needed: 2, got: frames });
    }
    let mut out = Blend {
        interp: Vec::with_capacity(frames),
        synth: Vec::with_capacity(frames),
        pred: Vec::with_capacity(frames),
        alpha: Vec::with_capacity(frames),
    };
    for t in 0..frames {
        let u = t as f64 / (frames - 1) as f64;
        let alpha = (1.0 - ease) * u + ease * u * u * (3.0 - 2.0 * u);
        let synth = prev + (next - prev) * (u + 0.25 * (std::f64::consts::PI * u).sin());
        let f = ais_combine(&[alpha], &[beta], &[prev], &[next], &[synth])?;
        out.interp.push(f.interp[0]);
        out.synth.push(synth);
        out.pred.push(f.pred[0]);
        out.alpha.push(alpha);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftScores {
    pub ground_truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub keyposes: Vec<usize>,
    pub stl1: f64,
    pub plain_l1: f64,
    pub npss: f64,
}

/// Scores a copy of a synthetic sequence delayed by `shift` frames (edges
/// repeat the first or last pose) against the original.
pub fn shift_demo(seed: u64, frames: usize, shift: i64) -> Result<ShiftScores> {
    let (full, sched) = sample(seed, frames, false)?;
    let (n, d) = (full.num_frames(), full.dim());
    let gt = MotionSequence::from_flat(full.frames().to_vec(), n, d, Vec::new(), 0, full.fps)?;
    let mut shifted = Vec::with_capacity(n * d);
    for t in 0..n as i64 {
        let src = (t - shift).clamp(0, n as i64 - 1) as usize;
        shifted.extend_from_slice(gt.frame(src));
    }
    let pred = MotionSequence::from_flat(shifted, n, d, Vec::new(), 0, gt.fps)?;
    Ok(ShiftScores {
        ground_truth: gt.channel(0),
        prediction: pred.channel(0),
        keyposes: sched.indices().to_vec(),
        stl1: stl1(&gt, &pred, &sched)?,
        plain_l1: plain_l1(&gt, &pred)?,
        npss: npss(&gt, &pred)?,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn extract(seed: u32, frames: u32, pure_step: bool, min_separation: u32, hold_epsilon: f64) -> std::result::Result<String, JsError> {
    to_js(extract_demo(seed as u64, frames as usize, pure_step, min_separation as usize, hold_epsilon))
}

#[wasm_bindgen]
pub fn blend(prev: f64, next: f64, frames: u32, ease: f64, beta: f64) -> std::result::Result<String, JsError> {
    to_js(blend_demo(prev, next, frames as usize, ease, beta))
}

#[wasm_bindgen]
pub fn shift(seed: u32, frames: u32, shift: i32) -> std::result::Result<String, JsError> {
    to_js(shift_demo(seed as u64, frames as usize, shift as i64))
}
