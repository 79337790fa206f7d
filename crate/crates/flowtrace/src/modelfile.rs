//! JSON model files: plant, attacker channels and scenario in one document.

use std::path::Path;

use flowtrace_core::detection::{DetectorKind, DetectorSpec, ThresholdPolicy};
use flowtrace_core::linalg::{Matrix, Vector};
use flowtrace_core::model::{
    validate_channels, validate_model, validate_scenario, AttackChannels, AttackSpec, ScenarioConfig, SystemModel,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {field} (line {line}, column {column}): {message}")]
    Parse {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] flowtrace_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    x0_mean: Vec<f64>,
    x0_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackDoc {
    #[serde(rename = "Ba")]
    ba: Vec<Vec<f64>>,
    sensors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum AttackKindDoc {
    None,
    Fdi { ua: Vec<f64>, da: Vec<f64> },
    ZeroDynamics { scale: f64 },
    Replay { record_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ThresholdDoc {
    Fixed(f64),
    BetaTarget(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum DetectorKindDoc {
    #[serde(rename = "chi2")]
    ChiSquared,
    #[serde(rename = "np")]
    NeymanPearson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorDoc {
    kind: DetectorKindDoc,
    window: usize,
    threshold: ThresholdDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    horizon: usize,
    trials: usize,
    seed: u64,
    attack_kind: AttackKindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    watermark_cov: Option<Vec<Vec<f64>>>,
    detector: DetectorDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    system: SystemDoc,
    attack: AttackDoc,
    scenario: ScenarioDoc,
}

/// Validated contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: SystemModel,
    pub channels: AttackChannels,
    pub scenario: ScenarioConfig,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Matrix, flowtrace_core::Error> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(flowtrace_core::Error::DimensionMismatch {
            field: field.into(),
            expected: format!("{ncols} columns in every row"),
            found: format!("a row with {} columns", bad.len()),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn detector_from_doc(d: &DetectorDoc) -> DetectorSpec {
    DetectorSpec {
        kind: match d.kind {
            DetectorKindDoc::ChiSquared => DetectorKind::ChiSquared,
            DetectorKindDoc::NeymanPearson => DetectorKind::NeymanPearson,
        },
        window: d.window,
        threshold: match d.threshold {
            ThresholdDoc::Fixed(t) => ThresholdPolicy::Fixed(t),
            ThresholdDoc::BetaTarget(delta) => ThresholdPolicy::BetaTarget { delta },
        },
    }
}

fn detector_to_doc(d: &DetectorSpec) -> DetectorDoc {
    DetectorDoc {
        kind: match d.kind {
            DetectorKind::ChiSquared => DetectorKindDoc::ChiSquared,
            DetectorKind::NeymanPearson => DetectorKindDoc::NeymanPearson,
        },
        window: d.window,
        threshold: match d.threshold {
            ThresholdPolicy::Fixed(t) => ThresholdDoc::Fixed(t),
            ThresholdPolicy::BetaTarget { delta } => ThresholdDoc::BetaTarget(delta),
        },
    }
}

impl TryFrom<ModelDoc> for ModelFile {
    type Error = flowtrace_core::Error;

    fn try_from(doc: ModelDoc) -> Result<Self, Self::Error> {
        let s = &doc.system;
        let model = validate_model(SystemModel {
            a: matrix("A", &s.a)?,
            b: matrix("B", &s.b)?,
            c: matrix("C", &s.c)?,
            q: matrix("Q", &s.q)?,
            r: matrix("R", &s.r)?,
            x0_mean: Vector::from_vec(s.x0_mean.clone()),
            x0_cov: matrix("x0_cov", &s.x0_cov)?,
        })?;
        let mut ba = matrix("Ba", &doc.attack.ba)?;
        if doc.attack.ba.is_empty() {
            ba = Matrix::zeros(model.n(), 0);
        }
        let channels = AttackChannels {
            ba,
            sensors: doc.attack.sensors.clone(),
        };
        validate_channels(&channels, &model)?;
        let sc = &doc.scenario;
        let attack = match &sc.attack_kind {
            AttackKindDoc::None => AttackSpec::None,
            AttackKindDoc::Fdi { ua, da } => AttackSpec::Fdi {
                ua: Vector::from_vec(ua.clone()),
                da: Vector::from_vec(da.clone()),
            },
            AttackKindDoc::ZeroDynamics { scale } => AttackSpec::ZeroDynamics { scale: *scale },
            AttackKindDoc::Replay { record_len } => AttackSpec::Replay {
                record_len: *record_len,
            },
        };
        let scenario = validate_scenario(
            ScenarioConfig {
                horizon: sc.horizon,
                trials: sc.trials,
                seed: sc.seed,
                attack,
                watermark_cov: sc.watermark_cov.as_deref().map(|w| matrix("watermark_cov", w)).transpose()?,
                detector: detector_from_doc(&sc.detector),
            },
            &model,
            &channels,
        )?;
        Ok(ModelFile {
            model,
            channels,
            scenario,
        })
    }
}

impl From<&ModelFile> for ModelDoc {
    fn from(f: &ModelFile) -> Self {
        let m = &f.model;
        let sc = &f.scenario;
        ModelDoc {
            system: SystemDoc {
                a: rows(&m.a),
                b: rows(&m.b),
                c: rows(&m.c),
                q: rows(&m.q),
                r: rows(&m.r),
                x0_mean: m.x0_mean.iter().copied().collect(),
                x0_cov: rows(&m.x0_cov),
            },
            attack: AttackDoc {
                ba: rows(&f.channels.ba),
                sensors: f.channels.sensors.clone(),
            },
            scenario: ScenarioDoc {
                horizon: sc.horizon,
                trials: sc.trials,
                seed: sc.seed,
                attack_kind: match &sc.attack {
                    AttackSpec::None => AttackKindDoc::None,
                    AttackSpec::Fdi { ua, da } => AttackKindDoc::Fdi {
                        ua: ua.iter().copied().collect(),
                        da: da.iter().copied().collect(),
                    },
                    AttackSpec::ZeroDynamics { scale } => AttackKindDoc::ZeroDynamics { scale: *scale },
                    AttackSpec::Replay { record_len } => AttackKindDoc::Replay {
                        record_len: *record_len,
                    },
                },
                watermark_cov: sc.watermark_cov.as_ref().map(rows),
                detector: detector_to_doc(&sc.detector),
            },
        }
    }
}

/// Parse and validate a model document.
pub fn load_model(text: &str) -> Result<ModelFile, ModelFileError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ModelFileError::Parse {
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    Ok(ModelFile::try_from(doc)?)
}

pub fn load_model_file(path: &Path) -> Result<ModelFile, ModelFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_model(&text)
}

/// Serialize to the model-file format. Floats use shortest round-trip
/// notation, so `load_model(&save_model(f))` reproduces `f` exactly.
pub fn save_model(file: &ModelFile) -> String {
    let value = serde_json::to_value(ModelDoc::from(file)).expect("model document serializes");
    let mut out = String::new();
    write_value(&mut out, &value, 0);
    out.push('\n');
    out
}

/// Indented objects; scalar arrays on one line, matrices one row per line.
fn write_value(out: &mut String, v: &serde_json::Value, indent: usize) {
    use serde_json::Value;
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (i, (k, val)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, val, indent + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        Value::Array(items) if items.iter().any(Value::is_array) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(out, item, indent + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}
