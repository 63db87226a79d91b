//! Versioned JSON documents for policies and datasets.
//!
//! Every document starts with `format` and `version` fields; the header is
//! checked before the body is decoded so that a bad file never yields a
//! partially populated value. Floats are written in shortest round-trip form
//! and non-finite values as the strings `"inf"`, `"-inf"`, `"nan"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::store::{AggDataset, LinearSoftmaxPolicy, TabularPolicy};
use crate::teacher::TeacherPolicy;

pub const POLICY_FORMAT: &str = "asym-distill/policy";
pub const DATASET_FORMAT: &str = "asym-distill/dataset";
pub const FORMAT_VERSION: u32 = 1;

/// Anything that can be stored in a policy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyDocument {
    Tabular(TabularPolicy),
    Teacher(TeacherPolicy),
    Linear(LinearSoftmaxPolicy),
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn write_doc<T: Serialize>(path: &Path, format: &str, body: &T) -> Result<()> {
    let env = Envelope {
        format,
        version: FORMAT_VERSION,
        body,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| Error::Malformed {
        path: path.into(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_doc<T: for<'de> Deserialize<'de>>(path: &Path, format: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.into(),
        reason,
    };
    let mut value: Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| malformed("top level is not an object".into()))?;
    match obj.remove("format") {
        Some(Value::String(f)) if f == format => {}
        other => return Err(malformed(format!("expected format {format:?}, found {other:?}"))),
    }
    let version = obj
        .remove("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| malformed("missing version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: version as u32,
        });
    }
    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
}

pub fn save_policy(path: impl AsRef<Path>, doc: &PolicyDocument) -> Result<()> {
    write_doc(path.as_ref(), POLICY_FORMAT, doc)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyDocument> {
    read_doc(path.as_ref(), POLICY_FORMAT)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &AggDataset) -> Result<()> {
    write_doc(path.as_ref(), DATASET_FORMAT, ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<AggDataset> {
    read_doc(path.as_ref(), DATASET_FORMAT)
}

pub(crate) mod float_vec {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum F {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| {
            if x.is_finite() {
                F::Num(*x)
            } else if x.is_nan() {
                F::Tag("nan".into())
            } else if *x > 0.0 {
                F::Tag("inf".into())
            } else {
                F::Tag("-inf".into())
            }
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<F>::deserialize(d)?
            .into_iter()
            .map(|f| match f {
                F::Num(x) => Ok(x),
                F::Tag(t) => match t.as_str() {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    _ => Err(D::Error::custom(format!("bad float tag {t:?}"))),
                },
            })
            .collect()
    }
}
