//! JSON model files. Matrix entries are written row-major with 17
//! significant digits so that models reload bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::dictionary::{Dictionary, DictionarySpec};
use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::krom::{make_bilinear, LocalizedKrom, PiecewiseBilinear};

pub const FORMAT_TAG: &str = "krom-model/1";

/// Row-major matrix serialized with 17 significant digits per entry.
#[derive(Debug, Clone, PartialEq)]
struct Matrix17(DMatrix<f64>);

impl Serialize for Matrix17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let m = &self.0;
        let mut rows = serializer.serialize_seq(Some(m.nrows()))?;
        for i in 0..m.nrows() {
            let row = (0..m.ncols())
                .map(|j| {
                    RawValue::from_string(format!("{:.16e}", m[(i, j)])).map_err(serde::ser::Error::custom)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            rows.serialize_element(&row)?;
        }
        rows.end()
    }
}

impl<'de> Deserialize<'de> for Matrix17 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix17(DMatrix::from_fn(n, m, |i, j| rows[i][j])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KoopmanRecord {
    control_label: f64,
    #[serde(rename = "K")]
    k: Matrix17,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Interval {
    u_a: f64,
    u_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Body {
    Koopman {
        #[serde(flatten)]
        record: KoopmanRecord,
    },
    /// Piecewise bilinear model: one operator per knot plus the interval table.
    Localized {
        intervals: Vec<Interval>,
        knots: Vec<KoopmanRecord>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    dictionary: DictionarySpec,
    h: f64,
    k: usize,
    #[serde(flatten)]
    body: Body,
}

/// A parsed model file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Koopman(KoopmanModel),
    Localized(LocalizedKrom),
}

fn record_to_model(rec: &KoopmanRecord, dict: &Dictionary, h: f64) -> Result<KoopmanModel> {
    KoopmanModel::from_koopman_matrix(
        rec.k.0.clone(),
        dict.clone(),
        rec.control_label,
        h,
        rec.fit_residual.unwrap_or(0.0),
    )
}

pub fn koopman_to_json(model: &KoopmanModel) -> Result<String> {
    let dict = model.dictionary();
    let file = ModelFile {
        format: FORMAT_TAG.into(),
        dictionary: dict.spec(),
        h: model.h(),
        k: dict.k(),
        body: Body::Koopman {
            record: KoopmanRecord {
                control_label: model.control_label(),
                k: Matrix17(model.koopman_matrix()),
                fit_residual: Some(model.fit_residual()),
            },
        },
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn localized_to_json<M: PiecewiseBilinear + ?Sized>(model: &M) -> Result<String> {
    let pieces = model.pieces();
    let dict = model.dictionary();
    let mut knots = Vec::with_capacity(pieces.len() + 1);
    for piece in pieces {
        knots.push(KoopmanRecord {
            control_label: piece.interval().0,
            k: Matrix17(piece.a().transpose()),
            fit_residual: None,
        });
    }
    let last = pieces.last().expect("non-empty");
    knots.push(KoopmanRecord {
        control_label: last.interval().1,
        k: Matrix17(last.upper().transpose()),
        fit_residual: None,
    });
    let file = ModelFile {
        format: FORMAT_TAG.into(),
        dictionary: dict.spec(),
        h: model.h(),
        k: dict.k(),
        body: Body::Localized {
            intervals: pieces
                .iter()
                .map(|p| Interval {
                    u_a: p.interval().0,
                    u_b: p.interval().1,
                })
                .collect(),
            knots,
        },
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<StoredModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != FORMAT_TAG {
        return Err(Error::invalid(format!("unsupported model format '{}'", file.format)));
    }
    let dict = Dictionary::from_spec(&file.dictionary)?;
    if dict.k() != file.k {
        return Err(Error::invalid(format!(
            "model declares k = {} but its dictionary has {}",
            file.k,
            dict.k()
        )));
    }
    match &file.body {
        Body::Koopman { record } => Ok(StoredModel::Koopman(record_to_model(record, &dict, file.h)?)),
        Body::Localized { intervals, knots } => {
            if knots.len() != intervals.len() + 1 {
                return Err(Error::invalid("interval table does not match the knot list"));
            }
            let models = knots
                .iter()
                .map(|r| record_to_model(r, &dict, file.h))
                .collect::<Result<Vec<_>>>()?;
            let mut pieces = Vec::with_capacity(intervals.len());
            for (i, iv) in intervals.iter().enumerate() {
                if iv.u_a != models[i].control_label() || iv.u_b != models[i + 1].control_label() {
                    return Err(Error::invalid(format!("interval {i} does not match its knots")));
                }
                pieces.push(make_bilinear(&models[i], &models[i + 1])?);
            }
            Ok(StoredModel::Localized(LocalizedKrom::new(pieces)?))
        }
    }
}

pub fn write_model_file(path: &Path, json: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, json.as_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<StoredModel> {
    model_from_json(&fs::read_to_string(path)?)
}

pub fn read_koopman_file(path: &Path) -> Result<KoopmanModel> {
    match read_model_file(path)? {
        StoredModel::Koopman(m) => Ok(m),
        StoredModel::Localized(_) => Err(Error::invalid(format!(
            "{} holds a localized model, expected a single Koopman matrix",
            path.display()
        ))),
    }
}
