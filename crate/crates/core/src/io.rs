//! Versioned JSON documents and atomic file output.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::FitResult;
use crate::geometry::{Camera, CameraSpaceConfig, SampleStats, SphereCameraPose};
use crate::landmarks::{LandmarkSet2D, LandmarkSet3D};
use crate::lifting::LiftResult;
use crate::masking::NormalTemplate;
use crate::metrics::{Assignment, EvalSample};

pub const SCHEMA_VERSION: u32 = 1;

/// A document body with a top-level `schema_version` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn to_json<T: Serialize>(body: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Versioned::new(body))? + "\n")
}

/// Parses a versioned document, rejecting other schema versions.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    check_version(&value)?;
    serde_json::from_value::<Versioned<T>>(value)
        .map(|v| v.body)
        .map_err(|e| Error::Schema(e.to_string()))
}

pub fn check_version(value: &serde_json::Value) -> Result<()> {
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Schema("missing schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: found.min(u32::MAX as u64) as u32,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Reads a file, or standard input when `path` is `None` or `-`.
pub fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => read_text(p),
        _ => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| io_err(Path::new("<stdin>"), e))?;
            Ok(s)
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json(&read_text(path)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    write_atomic(path, &to_json(body)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigDoc {
    pub rig: Vec<SphereCameraPose>,
}

/// Rigid template with its normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDoc {
    pub landmarks3d: LandmarkSet3D,
    pub normals: NormalTemplate,
}

/// `map[j]` is the source landmark read for target landmark `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDoc {
    pub map: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionDoc {
    pub assignment: Assignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesDoc {
    pub samples: Vec<EvalSample>,
}

/// Monocular fitting instances sharing one camera space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsDoc {
    pub detections: Vec<LandmarkSet2D>,
    #[serde(default)]
    pub config: CameraSpaceConfig,
}

/// Lift result plus what is needed to evaluate it downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftDoc {
    #[serde(flatten)]
    pub result: LiftResult,
    pub cameras: Vec<Camera>,
    #[serde(default)]
    pub gt_landmarks3d: Option<LandmarkSet3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

/// One fitting instance; exactly one of `result` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub instance: usize,
    pub result: Option<FitResult>,
    pub error: Option<ErrorInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDoc {
    pub fits: Vec<FitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub metric: String,
    pub value: f64,
    pub value_x100: f64,
    pub assignment: Assignment,
    pub landmarks: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSamplesDoc {
    pub config: CameraSpaceConfig,
    pub poses: Vec<SphereCameraPose>,
    pub stats: SampleStats,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        values: Vec<f64>,
    }

    #[test]
    fn round_trip_with_version() {
        let doc = Doc { values: vec![1.0, 2.5] };
        let text = to_json(&doc).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(from_json::<Doc>(&text).unwrap(), doc);
    }

    #[test]
    fn wrong_or_missing_version() {
        assert!(matches!(
            from_json::<Doc>(r#"{"schema_version": 2, "values": []}"#),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
        assert!(matches!(from_json::<Doc>(r#"{"values": []}"#), Err(Error::Schema(_))));
        assert!(matches!(from_json::<Doc>(r#"{"schema_version": 1, "values": 3}"#), Err(Error::Schema(_))));
        assert!(matches!(from_json::<Doc>("{"), Err(Error::Json(_))));
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("doc.json");
        write_json(&path, &Doc { values: vec![3.0] }).unwrap();
        write_json(&path, &Doc { values: vec![4.0] }).unwrap();
        assert_eq!(read_json::<Doc>(&path).unwrap().values, vec![4.0]);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
