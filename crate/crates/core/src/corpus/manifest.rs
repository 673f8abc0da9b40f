//! Data-source manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Category, Embeddings};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "stage1")]
    Stage1,
    #[serde(rename = "stage1_5")]
    Stage1_5,
    #[serde(rename = "stage2")]
    Stage2,
}

impl Stage {
    /// Max packed sequence length used for the stage.
    pub fn max_length(self) -> u64 {
        match self {
            Stage::Stage1 => 4096,
            Stage::Stage1_5 => 8192,
            Stage::Stage2 => 16384,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage1" => Ok(Stage::Stage1),
            "stage1_5" => Ok(Stage::Stage1_5),
            "stage2" => Ok(Stage::Stage2),
            _ => Err(Error::invalid(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<PathBuf>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSourceManifest {
    pub name: String,
    pub category: Category,
    pub corpus_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_paths: Option<EmbeddingPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota_override: Option<u64>,
    #[serde(default = "one")]
    pub repeat_factor: u32,
    pub stage: Stage,
}

impl DataSourceManifest {
    pub fn load_embeddings(&self) -> Result<Embeddings> {
        match &self.embedding_paths {
            Some(p) => Embeddings::load(p.image.as_deref(), p.text.as_deref()),
            None => Ok(Embeddings::default()),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_path);
        if let Some(e) = &mut self.embedding_paths {
            e.image.as_mut().map(fix);
            e.text.as_mut().map(fix);
        }
    }

    fn check(&self) -> Result<()> {
        if self.repeat_factor == 0 {
            return Err(Error::invalid(format!("{}: repeat_factor must be positive", self.name)));
        }
        if self.quota_override == Some(0) {
            return Err(Error::invalid(format!("{}: quota_override must be positive", self.name)));
        }
        let mut paths = vec![&self.corpus_path];
        if let Some(e) = &self.embedding_paths {
            paths.extend(e.image.iter());
            paths.extend(e.text.iter());
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::invalid(format!("{}: path does not exist: {}", self.name, p.display())));
            }
        }
        Ok(())
    }
}

/// Load a manifest file (a JSON array of sources). Relative paths resolve
/// against the manifest's directory and every referenced path must exist.
pub fn load_manifests(path: impl AsRef<Path>) -> Result<Vec<DataSourceManifest>> {
    let path = path.as_ref();
    let mut sources: Vec<DataSourceManifest> = super::read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut names = std::collections::HashSet::new();
    for s in &mut sources {
        s.resolve(base);
        s.check()?;
        if !names.insert(s.name.clone()) {
            return Err(Error::invalid(format!("duplicate source name {}", s.name)));
        }
    }
    Ok(sources)
}
