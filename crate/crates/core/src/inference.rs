//! Request/response types shared by the `infer`, `extract-keyposes` and
//! `eval` entry points of the CLI and the HTTP service.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::heads::HeadKind;
use crate::io::{parse_curves, parse_schedule};
use crate::metrics::{metric_report, MetricReport};
use crate::model::Model;
use crate::nn::Tensor;
use crate::pose::{CharacterSpec, MotionSequence};
use crate::schedule::{dba_extract, DbaParams, Provenance, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypose {
    pub frame: usize,
    pub pose: Vec<f64>,
    #[serde(default)]
    pub discrete: Vec<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferOptions {
    pub return_gates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    pub num_frames: usize,
    pub keyposes: Vec<Keypose>,
    #[serde(default)]
    pub options: InferOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub frames: Vec<Vec<f64>>,
    pub discrete: Vec<Vec<i64>>,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Gates>,
}

/// How a [`ServiceError`] maps onto an HTTP status class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// Malformed request (400).
    BadRequest,
    /// Well-formed but incompatible with the loaded model (422).
    Unprocessable,
    /// No model loaded (503).
    Unavailable,
    Internal,
}

/// Structured error body `{code, message, field?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ServiceError {
    #[serde(skip, default = "internal")]
    pub class: ErrorClass,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

fn internal() -> ErrorClass {
    ErrorClass::Internal
}

impl ServiceError {
    pub fn new(class: ErrorClass, code: &str, message: impl Into<String>) -> Self {
        ServiceError {
            class,
            code: code.into(),
            message: message.into(),
            field: None,
        }
    }

    pub fn bad_request(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError {
            field: Some(field.into()),
            ..Self::new(ErrorClass::BadRequest, "bad_request", message)
        }
    }

    pub fn unprocessable(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError {
            field: Some(field.into()),
            ..Self::new(ErrorClass::Unprocessable, "pose_width_mismatch", message)
        }
    }

    pub fn no_model() -> Self {
        Self::new(ErrorClass::Unavailable, "no_model", "no model is loaded")
    }
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        let class = match &e {
            Error::Parse { .. } | Error::Schema { .. } | Error::Shape(_) | Error::ScheduleMismatch(_) | Error::TooShort { .. } => {
                ErrorClass::BadRequest
            }
            Error::SpecMismatch(_) | Error::Numeric(_) | Error::InvalidRotation(_) | Error::Degenerate6d(_) => {
                ErrorClass::Unprocessable
            }
            _ => ErrorClass::Internal,
        };
        ServiceError::new(class, e.code(), e.to_string())
    }
}

/// Decodes a JSON request body; failures carry the offending field path.
pub fn parse_request<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ServiceError {
            field: (field != ".").then_some(field),
            ..ServiceError::new(ErrorClass::BadRequest, "bad_request", inner.to_string())
        }
    })?;
    de.end()
        .map_err(|e| ServiceError::new(ErrorClass::BadRequest, "bad_request", e.to_string()))?;
    Ok(value)
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.cols().max(1)).map(<[f64]>::to_vec).collect()
}

/// Validates the request against the model's character and returns the
/// sparse input sequence and schedule it describes.
pub fn request_inputs(spec: &CharacterSpec, req: &InferRequest) -> Result<(MotionSequence, Schedule), ServiceError> {
    let n = req.num_frames;
    if n < 2 {
        return Err(ServiceError::bad_request("num_frames", format!("need at least 2 frames, got {n}")));
    }
    let (d, k) = (spec.dim(), spec.discrete_count());
    let mut last = None;
    for (i, kp) in req.keyposes.iter().enumerate() {
        if kp.frame >= n {
            return Err(ServiceError::bad_request(
                format!("keyposes[{i}].frame"),
                format!("frame {} is outside 0..{n}", kp.frame),
            ));
        }
        if last.is_some_and(|l| kp.frame <= l) {
            return Err(ServiceError::bad_request(
                format!("keyposes[{i}].frame"),
                "keypose frames must be strictly increasing",
            ));
        }
        last = Some(kp.frame);
    }
    let frames: Vec<usize> = req.keyposes.iter().map(|kp| kp.frame).collect();
    if frames.first() != Some(&0) || frames.last() != Some(&(n - 1)) {
        return Err(ServiceError::bad_request(
            "keyposes",
            format!("keyposes must include frames 0 and {}", n - 1),
        ));
    }
    for (i, kp) in req.keyposes.iter().enumerate() {
        if kp.pose.len() != d {
            return Err(ServiceError::unprocessable(
                format!("keyposes[{i}].pose"),
                format!("pose has {} values, model character has {d}", kp.pose.len()),
            ));
        }
        if kp.discrete.len() != k && !(k == 0 && kp.discrete.is_empty()) {
            return Err(ServiceError::unprocessable(
                format!("keyposes[{i}].discrete"),
                format!("discrete has {} values, model character has {k}", kp.discrete.len()),
            ));
        }
        if let Some(c) = kp.pose.iter().position(|v| !v.is_finite()) {
            return Err(ServiceError::unprocessable(format!("keyposes[{i}].pose[{c}]"), "non-finite value"));
        }
    }
    let mut flat = vec![0.0; n * d];
    let mut discrete = vec![0; n * k];
    for kp in &req.keyposes {
        flat[kp.frame * d..(kp.frame + 1) * d].copy_from_slice(&kp.pose);
        discrete[kp.frame * k..(kp.frame + 1) * k].copy_from_slice(&kp.discrete);
    }
    let seq = MotionSequence::from_flat(flat, n, d, discrete, k, 24.0)?;
    let sched = Schedule::new(frames, n, Provenance::User)?;
    Ok((seq, sched))
}

/// Keyposes of `seq` at the frames of `sched`, as a request.
pub fn request_from_curves(seq: &MotionSequence, sched: &Schedule, return_gates: bool) -> InferRequest {
    InferRequest {
        num_frames: seq.num_frames(),
        keyposes: sched
            .indices()
            .iter()
            .map(|&t| Keypose {
                frame: t,
                pose: seq.frame(t).to_vec(),
                discrete: seq.discrete_frame(t).to_vec(),
            })
            .collect(),
        options: InferOptions { return_gates },
    }
}

pub fn infer(model: &Model, req: &InferRequest) -> Result<InferResponse, ServiceError> {
    let (seq, sched) = request_inputs(&model.spec, req)?;
    let pred = model.predict(&seq, &sched)?;
    let gates = match (&pred.alpha, &pred.beta) {
        (Some(a), Some(b)) if req.options.return_gates && model.config.head == HeadKind::Ais => Some(Gates {
            alpha: tensor_rows(a),
            beta: tensor_rows(b),
        }),
        _ => None,
    };
    Ok(InferResponse {
        frames: pred.sequence.rows(),
        discrete: pred.sequence.discrete_rows(),
        schedule: sched,
        gates,
    })
}

/// Runs the keypose extractor on curve JSON.
pub fn extract_keyposes(curves_json: &str, params: &DbaParams) -> Result<Schedule, ServiceError> {
    let (_, seq) = parse_curves(curves_json, Path::new("request body"))?;
    Ok(dba_extract(&seq, params)?)
}

/// Body of an evaluation request: ground truth and prediction in curve JSON
/// plus the schedule the segments are taken from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    pub ground_truth: serde_json::Value,
    pub prediction: serde_json::Value,
    pub schedule: serde_json::Value,
}

/// Metrics in the units of the posted curves.
pub fn eval_curves(req: &EvalRequest) -> Result<MetricReport, ServiceError> {
    let (gspec, gt) = parse_curves(&req.ground_truth.to_string(), Path::new("ground_truth"))?;
    let (pspec, pred) = parse_curves(&req.prediction.to_string(), Path::new("prediction"))?;
    if gspec != pspec {
        return Err(ServiceError::unprocessable("prediction", "prediction uses a different character"));
    }
    let sched = parse_schedule(&req.schedule.to_string(), Path::new("schedule"))?;
    Ok(metric_report(&gspec, &gt, &pred, &sched)?)
}
