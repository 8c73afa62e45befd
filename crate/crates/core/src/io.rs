//! On-disk formats: curve JSON, schedule JSON, report JSON and the model
//! checkpoint container.
//!
//! Curve file:
//!
//! ```json
//! {"character": {"controllers": [{"name": "root", "kind": "translate"}]},
//!  "fps": 24,
//!  "frames": [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]],
//!  "discrete": [[], []]}
//! ```
//!
//! Controllers may carry an optional `"channels"` count, which must match the
//! kind (translate/scale 3, rotate 6, discrete 1). Numbers are written in
//! shortest round-trip form, so values survive a write/read cycle bit for bit.
//!
//! Checkpoint container:
//!
//! | bytes          | content                                    |
//! |----------------|--------------------------------------------|
//! | 16             | magic `TWEENFORGE-CKPT\0`                  |
//! | 8              | header length `L`, u64 little-endian       |
//! | `L`            | UTF-8 JSON [`CheckpointHeader`]            |
//! | rest           | parameters, f64 little-endian              |
//!
//! Parameters are stored in parameter-store order (encoder layers, forward
//! then backward direction; head MLPs alpha, beta, synth; loss scales), each
//! tensor row-major. The header lists every tensor with its shape.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::pose::{CharacterSpec, ControllerKind, MotionSequence, NormalizationStats};
use crate::schedule::Schedule;
use crate::training::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 16] = b"TWEENFORGE-CKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurveFile {
    character: RawCharacter,
    fps: f64,
    frames: Vec<Vec<f64>>,
    #[serde(default)]
    discrete: Vec<Vec<i64>>,
    #[serde(default)]
    normalized: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCharacter {
    controllers: Vec<RawController>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    name: String,
    kind: ControllerKind,
    #[serde(default)]
    channels: Option<usize>,
}

fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let (line, column) = (inner.line(), inner.column());
        if let Some(token) = non_finite_token(text, line, column, &inner) {
            return Error::Numeric(format!(
                "{} line {line}, column {column}: non-finite number `{token}`",
                origin.display()
            ));
        }
        let message = if field.is_empty() || field == "." {
            inner.to_string()
        } else {
            format!("{field}: {inner}")
        };
        Error::Parse {
            path: origin.to_path_buf(),
            location: Some((line, column)),
            message,
        }
    })?;
    de.end().map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        location: Some((e.line(), e.column())),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// JSON has no NaN or infinity, but some writers emit `NaN`/`Infinity`
/// tokens or overflowing literals; those are reported as numeric errors.
fn non_finite_token(text: &str, line: usize, column: usize, err: &serde_json::Error) -> Option<String> {
    if err.to_string().starts_with("number out of range") {
        return Some("out of range".into());
    }
    let src = text.lines().nth(line.checked_sub(1)?)?;
    let start = column.saturating_sub(2).min(src.len());
    let tail = src.get(start..)?.trim_start_matches([',', '[', ' ', ':']);
    ["NaN", "-NaN", "Infinity", "-Infinity", "inf", "-inf"]
        .into_iter()
        .find(|t| tail.starts_with(t))
        .map(str::to_string)
}

fn schema(origin: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: origin.to_path_buf(),
        message: message.into(),
    }
}

/// Parses curve JSON. `origin` names the source in error messages.
pub fn parse_curves(text: &str, origin: &Path) -> Result<(CharacterSpec, MotionSequence)> {
    let raw: RawCurveFile = parse_json(text, origin)?;
    for c in &raw.character.controllers {
        let expected = if c.kind.is_discrete() { 1 } else { c.kind.width() };
        if let Some(n) = c.channels {
            if n != expected {
                return Err(schema(
                    origin,
                    format!(
                        "controller `{}` of kind {:?} declares {n} channels, expected {expected}",
                        c.name, c.kind
                    ),
                ));
            }
        }
    }
    let spec = CharacterSpec::new(raw.character.controllers.into_iter().map(|c| (c.name, c.kind)))
        .map_err(|e| schema(origin, e.to_string()))?;
    let n = raw.frames.len();
    if n < 2 {
        return Err(schema(origin, format!("need at least 2 frames, got {n}")));
    }
    for (t, f) in raw.frames.iter().enumerate() {
        if f.len() != spec.dim() {
            return Err(schema(
                origin,
                format!("frames[{t}] has {} values, character declares {}", f.len(), spec.dim()),
            ));
        }
    }
    let k = spec.discrete_count();
    let discrete = if k == 0 && raw.discrete.iter().all(Vec::is_empty) {
        Vec::new()
    } else {
        if raw.discrete.len() != n {
            return Err(schema(
                origin,
                format!("discrete has {} rows, frames has {n}", raw.discrete.len()),
            ));
        }
        if let Some((t, row)) = raw.discrete.iter().enumerate().find(|(_, r)| r.len() != k) {
            return Err(schema(
                origin,
                format!("discrete[{t}] has {} values, character declares {k}", row.len()),
            ));
        }
        raw.discrete
    };
    if !(raw.fps.is_finite() && raw.fps > 0.0) {
        return Err(schema(origin, format!("fps must be positive, got {}", raw.fps)));
    }
    let mut seq = MotionSequence::new(raw.frames, discrete, raw.fps)?;
    seq.normalized = raw.normalized;
    Ok((spec, seq))
}

/// Curve JSON with one frame per line.
pub fn curves_to_string(spec: &CharacterSpec, seq: &MotionSequence) -> Result<String> {
    seq.check_spec(spec)?;
    #[derive(Serialize)]
    struct Decl<'a> {
        name: &'a str,
        kind: ControllerKind,
    }
    let decls: Vec<Decl> = spec
        .controllers()
        .iter()
        .map(|c| Decl {
            name: &c.name,
            kind: c.kind,
        })
        .collect();
    let mut out = String::new();
    out.push_str("{\n  \"character\": {\"controllers\": ");
    out.push_str(&json(&decls));
    out.push_str("},\n  \"fps\": ");
    out.push_str(&json(&seq.fps));
    if seq.normalized {
        out.push_str(",\n  \"normalized\": true");
    }
    out.push_str(",\n  \"frames\": [\n");
    let rows = seq.rows();
    for (t, row) in rows.iter().enumerate() {
        out.push_str("    ");
        out.push_str(&json(row));
        out.push_str(if t + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ],\n  \"discrete\": [\n");
    let drows = seq.discrete_rows();
    for (t, row) in drows.iter().enumerate() {
        out.push_str("    ");
        out.push_str(&json(row));
        out.push_str(if t + 1 < drows.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    Ok(out)
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

pub fn parse_schedule(text: &str, origin: &Path) -> Result<Schedule> {
    parse_json(text, origin)
}

pub fn schedule_to_string(sched: &Schedule) -> String {
    serde_json::to_string(sched).expect("schedule serializes") + "\n"
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Numeric(e.to_string()))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<(CharacterSpec, MotionSequence)> {
    parse_curves(&read_text(path)?, path)
}

pub fn write_curves(path: &Path, spec: &CharacterSpec, seq: &MotionSequence) -> Result<()> {
    atomic_write(path, curves_to_string(spec, seq)?.as_bytes())
}

pub fn read_schedule(path: &Path) -> Result<Schedule> {
    parse_schedule(&read_text(path)?, path)
}

pub fn write_schedule(path: &Path, sched: &Schedule) -> Result<()> {
    atomic_write(path, schedule_to_string(sched).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, to_json_string(value)?.as_bytes())
}

/// Training configuration from TOML.
pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = read_text(path)?;
    toml::from_str::<TrainConfig>(&text)
        .map_err(|e| {
            let location = e.span().map(|s| line_col(&text, s.start));
            Error::Parse {
                path: path.to_path_buf(),
                location,
                message: e.message().to_string(),
            }
        })
        .and_then(|c| c.validate().map(|_| c))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

/// One sequence file of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEntry {
    pub path: PathBuf,
    pub sequence: MotionSequence,
    /// Schedule stored next to the curves as `<stem>.schedule.json`, if any.
    pub schedule: Option<Schedule>,
}

fn is_schedule_file(p: &Path) -> bool {
    p.to_string_lossy().ends_with(".schedule.json")
}

/// Schedule path paired with a curve file: `a/foo.json` -> `a/foo.schedule.json`.
pub fn schedule_path_for(curves: &Path) -> PathBuf {
    curves.with_extension("schedule.json")
}

/// Reads a single curve file or every `*.json` curve file in a directory
/// (sorted by name, schedule files excluded). All files must share one
/// character.
pub fn read_curve_set(path: &Path) -> Result<(CharacterSpec, Vec<CurveEntry>)> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && !is_schedule_file(p))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut spec: Option<CharacterSpec> = None;
    let mut entries = Vec::with_capacity(files.len());
    for file in files {
        let (s, sequence) = read_curves(&file)?;
        match &spec {
            Some(first) if *first != s => {
                return Err(Error::SpecMismatch(format!(
                    "{} uses a different character than the rest of the set",
                    file.display()
                )))
            }
            Some(_) => {}
            None => spec = Some(s),
        }
        let sp = schedule_path_for(&file);
        let schedule = if sp.exists() { Some(read_schedule(&sp)?) } else { None };
        entries.push(CurveEntry {
            path: file,
            sequence,
            schedule,
        });
    }
    Ok((spec.expect("at least one file"), entries))
}

/// Tensor listing in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec_hash: String,
    pub spec: CharacterSpec,
    pub model: ModelConfig,
    pub normalization: NormalizationStats,
    pub seed: u64,
    pub param_count: usize,
    pub params: Vec<ParamEntry>,
    /// Hex SHA-256 of the payload bytes.
    pub payload_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(model.param_count() * 8);
    for v in model.store.flatten() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        spec_hash: model.spec.hash(),
        spec: model.spec.clone(),
        model: model.config.clone(),
        normalization: model.norm.clone(),
        seed: model.seed,
        param_count: model.param_count(),
        params: model
            .store
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        payload_sha256: sha256_hex(&payload),
    };
    let header = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(24 + header.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes the header without touching the payload.
pub fn checkpoint_header(bytes: &[u8]) -> Result<CheckpointHeader, CheckpointError> {
    split_checkpoint(bytes).map(|(h, _)| h)
}

fn split_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), CheckpointError> {
    let magic_len = CHECKPOINT_MAGIC.len();
    let probe = bytes.len().min(magic_len);
    if bytes[..probe] != CHECKPOINT_MAGIC[..probe] {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < magic_len + 8 {
        return Err(CheckpointError::Truncated {
            expected: magic_len + 8,
            found: bytes.len(),
        });
    }
    let len_bytes: [u8; 8] = bytes[magic_len..magic_len + 8].try_into().expect("8 bytes");
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| CheckpointError::Header("header length overflows".into()))?;
    let body = &bytes[magic_len + 8..];
    if body.len() < header_len {
        return Err(CheckpointError::Truncated {
            expected: magic_len + 8 + header_len,
            found: bytes.len(),
        });
    }
    let (header_bytes, payload) = body.split_at(header_len);
    let value: serde_json::Value =
        serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CheckpointError::Header("missing format_version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(CheckpointError::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: CheckpointHeader =
        serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok((header, payload))
}

/// Verifies and rebuilds a model. With `expected` set, the checkpoint must
/// have been trained for that character.
pub fn checkpoint_from_bytes(bytes: &[u8], expected: Option<&CharacterSpec>) -> Result<Model> {
    let (header, payload) = split_checkpoint(bytes)?;
    let want = header.param_count * 8;
    if payload.len() < want {
        return Err(CheckpointError::Truncated {
            expected: bytes.len() - payload.len() + want,
            found: bytes.len(),
        }
        .into());
    }
    if payload.len() > want {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after the payload",
            payload.len() - want
        ))
        .into());
    }
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(CheckpointError::ChecksumMismatch.into());
    }
    let actual = header.spec.hash();
    if actual != header.spec_hash {
        return Err(CheckpointError::SpecHashMismatch {
            found: header.spec_hash,
            expected: actual,
        }
        .into());
    }
    if let Some(spec) = expected {
        let want = spec.hash();
        if want != header.spec_hash {
            return Err(CheckpointError::SpecHashMismatch {
                found: header.spec_hash,
                expected: want,
            }
            .into());
        }
    }
    let mut model = Model::new(header.spec, header.model, header.normalization, header.seed)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let layout_matches = model.store.len() == header.params.len()
        && model
            .store
            .iter()
            .zip(&header.params)
            .all(|((_, name, t), p)| name == p.name && t.rows() == p.rows && t.cols() == p.cols);
    if !layout_matches || model.param_count() != header.param_count {
        return Err(CheckpointError::Header("parameter layout does not match the model configuration".into()).into());
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    model.store.load_flat(&values)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    atomic_write(path, &checkpoint_to_bytes(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, None)
}

pub fn load_checkpoint_for(path: &Path, spec: &CharacterSpec) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, Some(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadKind;

    fn small_spec() -> CharacterSpec {
        CharacterSpec::new([
            ("root", ControllerKind::Translate),
            ("switch", ControllerKind::Discrete),
        ])
        .unwrap()
    }

    #[test]
    fn curves_round_trip_bitwise() {
        let spec = small_spec();
        let vals = [0.1, -0.0, 1e-310, 123456.789, f64::MAX, -3.0e-7];
        let frames = vec![vals[..3].to_vec(), vals[3..].to_vec()];
        let seq = MotionSequence::new(frames, vec![vec![2], vec![-1]], 30.0).unwrap();
        let text = curves_to_string(&spec, &seq).unwrap();
        let (spec2, seq2) = parse_curves(&text, Path::new("mem")).unwrap();
        assert_eq!(spec2, spec);
        let bits = |s: &MotionSequence| s.frames().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&seq2), bits(&seq));
        assert_eq!(seq2.discrete(), seq.discrete());
    }

    #[test]
    fn missing_fps_is_parse_error() {
        let text = r#"{"character": {"controllers": [{"name": "a", "kind": "scale"}]},
            "frames": [[1, 1, 1], [1, 1, 1]]}"#;
        let err = parse_curves(text, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, Error::Parse { location: Some(_), .. }), "{err}");
        assert!(err.to_string().contains("fps"), "{err}");
    }

    #[test]
    fn five_channel_rotation_is_schema_error() {
        let text = r#"{"character": {"controllers": [{"name": "a", "kind": "rotate", "channels": 5}]},
            "fps": 24, "frames": [[1, 0, 0, 0, 1], [1, 0, 0, 0, 1]]}"#;
        let err = parse_curves(text, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
    }

    #[test]
    fn non_finite_tokens_are_numeric_errors() {
        for bad in ["NaN", "Infinity", "-Infinity", "1e999"] {
            let text = format!(
                r#"{{"character": {{"controllers": [{{"name": "a", "kind": "scale"}}]}},
                "fps": 24, "frames": [[1, {bad}, 1], [1, 1, 1]]}}"#
            );
            let err = parse_curves(&text, Path::new("x.json")).unwrap_err();
            assert!(matches!(err, Error::Numeric(_)), "{bad}: {err}");
        }
    }

    #[test]
    fn checkpoint_errors() {
        let spec = small_spec();
        let cfg = ModelConfig::for_spec(&spec, HeadKind::Ais, 4, 1);
        let model = Model::new(spec.clone(), cfg, NormalizationStats::identity(3), 3).unwrap();
        let bytes = checkpoint_to_bytes(&model).unwrap();
        assert_eq!(&checkpoint_from_bytes(&bytes, Some(&spec)).unwrap(), &model);

        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x01;
        let code = |r: Result<Model>| r.unwrap_err().code();
        assert_eq!(code(checkpoint_from_bytes(&bad, None)), "checkpoint_checksum");
        assert_eq!(code(checkpoint_from_bytes(&bytes[..bytes.len() - 8], None)), "checkpoint_truncated");
        assert_eq!(code(checkpoint_from_bytes(&bytes[..20], None)), "checkpoint_truncated");
        assert_eq!(code(checkpoint_from_bytes(b"GIF89a", None)), "checkpoint_bad_magic");

        let other = CharacterSpec::new([("hips", ControllerKind::Translate)]).unwrap();
        assert_eq!(code(checkpoint_from_bytes(&bytes, Some(&other))), "checkpoint_spec_hash");

        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("\"format_version\":1").unwrap();
        let mut v2 = bytes.clone();
        v2[at + "\"format_version\":".len()] = b'2';
        assert_eq!(code(checkpoint_from_bytes(&v2, None)), "checkpoint_version");
    }

    #[test]
    fn toml_location() {
        assert_eq!(line_col("a\nbc\nd", 4), (2, 3));
        assert_eq!(line_col("abc", 0), (1, 1));
    }
}
