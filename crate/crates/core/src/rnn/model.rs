use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::rnn::lstm::{LstmParams, GATES};
use crate::telemetry::ModelProfile;

pub const MODEL_VERSION: u64 = 1;

/// Trained classifier together with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub profile: ModelProfile,
    pub classes: Vec<String>,
    pub norm: NormStats,
    pub params: LstmParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Weights {
    #[serde(rename = "W_ih")]
    w_ih: Vec<Vec<f64>>,
    #[serde(rename = "W_hh")]
    w_hh: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(rename = "W_out")]
    w_out: Vec<Vec<f64>>,
    b_out: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    profile: ModelProfile,
    input_dim: usize,
    hidden: usize,
    classes: Vec<String>,
    norm: NormStats,
    weights: Weights,
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    if width == 0 {
        return Vec::new();
    }
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

fn flatten(name: &str, m: Vec<Vec<f64>>, n_rows: usize, width: usize) -> Result<Vec<f64>> {
    if m.len() != n_rows || m.iter().any(|r| r.len() != width) {
        return Err(Error::DimensionMismatch(format!("{name} should be {n_rows}x{width}")));
    }
    Ok(m.into_iter().flatten().collect())
}

impl LstmModel {
    pub fn new(profile: ModelProfile, params: LstmParams, norm: NormStats) -> Self {
        LstmModel {
            profile,
            classes: profile.class_names().iter().map(|s| s.to_string()).collect(),
            norm,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.params.check()?;
        let p = &self.params;
        let file = ModelFile {
            version: MODEL_VERSION,
            profile: self.profile,
            input_dim: p.input_dim,
            hidden: p.hidden,
            classes: self.classes.clone(),
            norm: self.norm,
            weights: Weights {
                w_ih: rows(&p.w_ih, p.input_dim),
                w_hh: rows(&p.w_hh, p.hidden),
                b: p.b.clone(),
                w_out: rows(&p.w_out, p.hidden),
                b_out: p.b_out.clone(),
            },
        };
        serde_json::to_string(&file).map_err(|e| Error::CorruptModel(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::CorruptModel("missing version".into()))?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let f: ModelFile = serde_json::from_value(value).map_err(|e| Error::CorruptModel(e.to_string()))?;
        let (d, h, c) = (f.input_dim, f.hidden, f.classes.len());
        if h == 0 || d == 0 || c < 2 {
            return Err(Error::DimensionMismatch(format!(
                "input_dim {d}, hidden {h}, {c} classes"
            )));
        }
        let w = f.weights;
        let params = LstmParams {
            input_dim: d,
            hidden: h,
            classes: c,
            w_ih: flatten("W_ih", w.w_ih, GATES * h, d)?,
            w_hh: flatten("W_hh", w.w_hh, GATES * h, h)?,
            b: flatten("b", vec![w.b], 1, GATES * h)?,
            w_out: flatten("W_out", w.w_out, c, h)?,
            b_out: flatten("b_out", vec![w.b_out], 1, c)?,
        };
        Ok(LstmModel {
            profile: f.profile,
            classes: f.classes,
            norm: f.norm,
            params,
        })
    }
}

pub fn save_model(model: &LstmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = model.to_json()?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LstmModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model() -> LstmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut p = LstmParams::init(5, 6, 2, &mut rng);
        for v in p.w_out.iter_mut().chain(p.b_out.iter_mut()) {
            *v = rng.random_range(-1.0..1.0) * 1e-3 / 7.0;
        }
        let norm = NormStats {
            mean: std::array::from_fn(|_| rng.random::<f64>() * 1e5),
            std: std::array::from_fn(|_| rng.random::<f64>() / 3.0),
        };
        LstmModel::new(ModelProfile::B, p, norm)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = random_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params.w_hh.iter().zip(&m.params.w_hh) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let text = random_model()
            .to_json()
            .unwrap()
            .replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(
            LstmModel::from_json(&text),
            Err(Error::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = random_model().to_json().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(LstmModel::from_json(cut), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn inconsistent_dimensions_are_rejected() {
        let text = random_model()
            .to_json()
            .unwrap()
            .replacen("\"hidden\":6", "\"hidden\":7", 1);
        assert!(matches!(LstmModel::from_json(&text), Err(Error::DimensionMismatch(_))));
    }
}
