use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_label_volume, read_mask, read_volume, LabelVolume, Mask, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub id: String,
    pub volume: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tissue: Option<PathBuf>,
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            _ => Err(Error::Config(format!("split must be `train` or `test`, got `{s}`"))),
        }
    }
}

/// Dataset description. Relative paths resolve against the manifest's own
/// directory. A non-null `norm_constant` means the stored volumes are raw
/// and get divided by it on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub subjects: Vec<Subject>,
    pub split: Split,
    pub norm_constant: Option<f64>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate subject id `{}`", s.id)));
            }
        }
        let train: HashSet<_> = self.split.train.iter().map(String::as_str).collect();
        for id in self.split.train.iter().chain(&self.split.test) {
            if !ids.contains(id.as_str()) {
                return Err(Error::Invalid(format!("split names unknown subject `{id}`")));
            }
        }
        if let Some(id) = self.split.test.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::Invalid(format!("subject `{id}` is in both train and test")));
        }
        if let Some(c) = self.norm_constant {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Invalid(format!("norm_constant must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn subject(&self, id: &str) -> Result<&Subject> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Invalid(format!("unknown subject `{id}`")))
    }

    pub fn ids(&self, tag: SplitTag) -> &[String] {
        match tag {
            SplitTag::Train => &self.split.train,
            SplitTag::Test => &self.split.test,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Stored volume without normalization.
    pub fn load_raw_volume(&self, s: &Subject) -> Result<Volume> {
        read_volume(self.resolve(&s.volume))
    }

    /// Volume divided by the normalization constant when one is recorded.
    pub fn load_volume(&self, s: &Subject) -> Result<Volume> {
        let mut v = self.load_raw_volume(s)?;
        if let Some(c) = self.norm_constant {
            let c = c as f32;
            v.data_mut().iter_mut().for_each(|x| *x /= c);
        }
        Ok(v)
    }

    pub fn load_mask(&self, s: &Subject) -> Result<Mask> {
        read_mask(self.resolve(&s.mask))
    }

    pub fn load_tissue(&self, s: &Subject) -> Result<Option<LabelVolume>> {
        s.tissue
            .as_ref()
            .map(|p| read_label_volume(self.resolve(p)))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str) -> Subject {
        Subject {
            id: id.into(),
            volume: format!("{id}.vol").into(),
            mask: format!("{id}.mask").into(),
            tissue: None,
            targets: BTreeMap::new(),
        }
    }

    #[test]
    fn json_field_names() {
        let m = DatasetManifest {
            subjects: vec![subject("a")],
            split: Split {
                train: vec!["a".into()],
                test: vec![],
            },
            norm_constant: None,
            base_dir: PathBuf::new(),
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["norm_constant", "split", "subjects"]);
        let s = v["subjects"][0].as_object().unwrap();
        assert!(s.contains_key("targets") && !s.contains_key("tissue"));
    }

    #[test]
    fn rejects_overlapping_split_and_duplicates() {
        let mut m = DatasetManifest {
            subjects: vec![subject("a"), subject("b")],
            split: Split {
                train: vec!["a".into()],
                test: vec!["a".into()],
            },
            norm_constant: None,
            base_dir: PathBuf::new(),
        };
        assert!(m.validate().is_err());
        m.split.test = vec!["b".into()];
        assert!(m.validate().is_ok());
        m.subjects.push(subject("a"));
        assert!(m.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"subjects":[],"split":{"train":[],"test":[]},"norm_constant":null,"extra":1}"#;
        assert!(serde_json::from_str::<DatasetManifest>(text).is_err());
    }
}
