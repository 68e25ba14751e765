//! Dataset location resolution and layered configuration.

use std::path::{Path, PathBuf};

use casar::datamodel::{
    load_clips, load_contact_targets_subset, load_meshes, ActionClip, ContactSample,
    DatasetConfig,
};
use casar::pipeline::{derive_contact_dataset, TrainingConfig};
use casar::{Error, Result};
use serde_json::Value;

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else
/// is replaced.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(base), Value::Object(patch)) => {
            for (k, v) in patch {
                merge(base.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, patch) => *slot = patch,
    }
}

fn from_value<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Validation(format!("invalid {what}: {e}")))
}

/// A dataset directory, optionally narrowed to one clip file inside it.
pub struct DataSource {
    pub dir: PathBuf,
    pub clip_file: Option<PathBuf>,
}

impl DataSource {
    pub fn new(path: &Path) -> Self {
        if path.is_file() {
            Self {
                dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
                clip_file: Some(path.to_path_buf()),
            }
        } else {
            Self {
                dir: path.to_path_buf(),
                clip_file: None,
            }
        }
    }

    /// The explicit clip file, else `preferred` if it exists, else `clips.jsonl`.
    pub fn clips_path(&self, preferred: &str) -> PathBuf {
        if let Some(f) = &self.clip_file {
            return f.clone();
        }
        let p = self.dir.join(preferred);
        if p.is_file() {
            p
        } else {
            self.dir.join("clips.jsonl")
        }
    }

    pub fn dataset_config_path(&self) -> Option<PathBuf> {
        let p = self.dir.join("config.json");
        p.is_file().then_some(p)
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        match self.dataset_config_path() {
            Some(p) => from_value(read_json(&p)?, "dataset config"),
            None => Ok(DatasetConfig::default()),
        }
    }

    /// Layers defaults, the directory's `config.json` (dataset section) and
    /// an explicit config file, in that order.
    pub fn training_config(&self, explicit: Option<&Path>) -> Result<TrainingConfig> {
        let mut value = serde_json::to_value(TrainingConfig::default()).expect("config serializes");
        if let Some(p) = self.dataset_config_path() {
            merge(&mut value, serde_json::json!({ "dataset": read_json(&p)? }));
        }
        if let Some(p) = explicit {
            merge(&mut value, read_json(p)?);
        }
        from_value(value, "training config")
    }

    pub fn load_clips(&self, preferred: &str, config: &DatasetConfig) -> Result<(PathBuf, Vec<ActionClip>)> {
        let path = self.clips_path(preferred);
        let clips = load_clips(&path, config)?;
        if clips.is_empty() {
            return Err(Error::Validation(format!("{} contains no clips", path.display())));
        }
        Ok((path, clips))
    }

    /// Ground-truth contact targets for `clips`: read from `contacts.jsonl`
    /// when present, else derived from `meshes/`. Returns no samples when
    /// neither exists and `required` is false.
    pub fn contact_samples(
        &self,
        clips: &[ActionClip],
        config: &DatasetConfig,
        required: bool,
    ) -> Result<Vec<ContactSample>> {
        let contacts = self.dir.join("contacts.jsonl");
        let meshes = self.dir.join("meshes");
        if contacts.is_file() {
            let samples = load_contact_targets_subset(&contacts, clips, config)?;
            let frames: usize = clips.iter().map(|c| c.frames.len()).sum();
            if samples.len() != frames {
                return Err(Error::Validation(format!(
                    "{} covers {} of {frames} frames; rerun derive-contact",
                    contacts.display(),
                    samples.len()
                )));
            }
            Ok(samples)
        } else if meshes.is_dir() {
            derive_contact_dataset(clips, &load_meshes(&meshes)?, config)
        } else if required {
            Err(Error::Validation(format!(
                "{} has neither contacts.jsonl nor meshes/",
                self.dir.display()
            )))
        } else {
            Ok(Vec::new())
        }
    }
}
