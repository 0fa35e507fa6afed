//! TOML experiment configuration.
//!
//! A file holds one base experiment. An optional `[grid]` table lists the
//! embeddings and encoders of a matrix run, and `[cells."<embedding>/<encoder>"]`
//! tables are merged over the base for one cell.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trollnet_core::context_embed::BiLmConfig;
use trollnet_core::encoders::{EncoderConfig, EncoderKind};
use trollnet_core::model::PathwayKind;
use trollnet_core::optim::Optimizer;
use trollnet_core::static_embed::{GloveTrainConfig, Weighting};
use trollnet_core::train::TrainConfig;

use crate::dataset::{Column, DatasetOptions};
use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSpec {
    Index(usize),
    Name(String),
}

impl From<&ColumnSpec> for Column {
    fn from(c: &ColumnSpec) -> Self {
        match c {
            ColumnSpec::Index(i) => Column::Index(*i),
            ColumnSpec::Name(n) => n.parse().expect("infallible"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// `"tab"`, `"comma"` or a single character; inferred from the extension when absent.
    pub delimiter: Option<String>,
    pub header: bool,
    pub text_col: ColumnSpec,
    pub label_col: ColumnSpec,
    pub pos_label: String,
    pub neg_label: String,
    pub max_len: usize,
    pub min_count: usize,
    pub ratios: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            delimiter: None,
            header: false,
            text_col: ColumnSpec::Index(0),
            label_col: ColumnSpec::Index(1),
            pos_label: "1".into(),
            neg_label: "0".into(),
            max_len: 32,
            min_count: 1,
            ratios: [0.7, 0.1, 0.2],
        }
    }
}

pub fn parse_delimiter(s: &str) -> Result<u8> {
    match s {
        "tab" | "\t" => Ok(b'\t'),
        "comma" | "," => Ok(b','),
        s if s.len() == 1 => Ok(s.as_bytes()[0]),
        s => Err(Error::Config(format!("delimiter {s:?} must be \"tab\", \"comma\" or one ASCII character"))),
    }
}

impl DataSection {
    pub fn data_path(&self) -> Result<&Path> {
        self.path.as_deref().ok_or_else(|| Error::Config("data.path is required".into()))
    }

    pub fn options(&self) -> Result<DatasetOptions> {
        let base = DatasetOptions::for_path(self.data_path()?);
        Ok(DatasetOptions {
            delimiter: match &self.delimiter {
                Some(d) => parse_delimiter(d)?,
                None => base.delimiter,
            },
            has_header: self.header,
            text_col: (&self.text_col).into(),
            label_col: (&self.label_col).into(),
            pos_label: self.pos_label.clone(),
            neg_label: self.neg_label.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GloveSection {
    /// Pretrained vector text to load instead of training.
    pub vectors: Option<PathBuf>,
    pub dim: usize,
    pub window: usize,
    pub weighting: Weighting,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for GloveSection {
    fn default() -> Self {
        let d = GloveTrainConfig::default();
        GloveSection {
            vectors: None,
            dim: d.dim,
            window: d.window,
            weighting: Weighting::InverseDistance,
            x_max: d.x_max,
            alpha: d.alpha,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
        }
    }
}

impl GloveSection {
    pub fn train_config(&self, seed: u64) -> GloveTrainConfig {
        GloveTrainConfig {
            dim: self.dim,
            window: self.window,
            x_max: self.x_max,
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiLmSection {
    pub dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for BiLmSection {
    fn default() -> Self {
        let d = BiLmConfig::default();
        BiLmSection {
            dim: d.dim,
            hidden: d.hidden,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            optimizer: d.optimizer,
        }
    }
}

impl BiLmSection {
    pub fn train_config(&self, seed: u64) -> BiLmConfig {
        BiLmConfig {
            dim: self.dim,
            hidden: self.hidden,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecomputedSection {
    /// `CTX1` file with one document per data row, in file order.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub embedding: PathwayKind,
    pub encoder: EncoderKind,
    pub fine_tune_embeddings: bool,
    /// Run matrix cells on a thread pool.
    pub parallel: bool,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub glove: GloveSection,
    pub bilm: BiLmSection,
    pub precomputed: PrecomputedSection,
    /// Encoder hyperparameters; `kind` is taken from `encoder`.
    pub model: EncoderConfig,
    /// Training settings; `seed` is replaced by the per-cell seed.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            embedding: PathwayKind::GloveStatic,
            encoder: EncoderKind::Cnn,
            fine_tune_embeddings: false,
            parallel: false,
            out: None,
            data: DataSection::default(),
            glove: GloveSection::default(),
            bilm: BiLmSection::default(),
            precomputed: PrecomputedSection::default(),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn cell_name(&self) -> String {
        cell_key(self.embedding, self.encoder)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            kind: self.encoder,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.max_len == 0 || self.data.min_count == 0 {
            return Err(Error::Config("data.max_len and data.min_count must be ≥ 1".into()));
        }
        if self.encoder == EncoderKind::Transformer && self.model.max_len < self.data.max_len {
            return Err(Error::Config(format!(
                "model.max_len {} is shorter than data.max_len {}",
                self.model.max_len, self.data.max_len
            )));
        }
        self.data.options()?;
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.path);
        fix(&mut self.glove.vectors);
        fix(&mut self.precomputed.path);
        fix(&mut self.out);
    }
}

pub fn cell_key(embedding: PathwayKind, encoder: EncoderKind) -> String {
    format!("{}/{}", embedding.name(), encoder.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    embeddings: Vec<PathwayKind>,
    encoders: Vec<EncoderKind>,
}

/// A rectangular embedding × encoder grid, cells in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub base: ExperimentConfig,
    pub embeddings: Vec<PathwayKind>,
    pub encoders: Vec<EncoderKind>,
    pub cells: Vec<ExperimentConfig>,
}

/// Tables a cell may override; everything else is shared by the whole grid.
const CELL_KEYS: [&str; 5] = ["glove", "bilm", "model", "train", "fine_tune_embeddings"];

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn deserialize(table: toml::Table, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.resolve_paths(base_dir);
    Ok(config)
}

impl GridConfig {
    /// Parses a config; relative paths are taken from `base_dir`. Without a
    /// `[grid]` table the grid is the single base cell.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let grid = table.remove("grid");
        let overrides = match table.remove("cells") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(Error::Config("cells must be a table".into())),
        };
        let base = deserialize(table.clone(), base_dir)?;
        let (embeddings, encoders) = match grid {
            Some(g) => {
                let g: GridSection = g.try_into().map_err(|e: toml::de::Error| Error::Config(format!("grid: {e}")))?;
                (g.embeddings, g.encoders)
            }
            None => (vec![base.embedding], vec![base.encoder]),
        };
        if embeddings.is_empty() || encoders.is_empty() {
            return Err(Error::Config("grid needs at least one embedding and one encoder".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !embeddings.iter().all(|e| seen.insert(e.name())) || !encoders.iter().all(|e| seen.insert(e.name())) {
            return Err(Error::Config("grid lists an embedding or encoder twice".into()));
        }
        let mut keys: Vec<String> = Vec::new();
        for &e in &embeddings {
            for &n in &encoders {
                keys.push(cell_key(e, n));
            }
        }
        for (key, value) in &overrides {
            if !keys.contains(key) {
                return Err(Error::Config(format!("cell {key:?} is not in the grid")));
            }
            let toml::Value::Table(t) = value else {
                return Err(Error::Config(format!("cell {key:?} must be a table")));
            };
            if let Some(bad) = t.keys().find(|k| !CELL_KEYS.contains(&k.as_str())) {
                return Err(Error::Config(format!(
                    "cell {key:?} overrides {bad:?}; cells may only override {}",
                    CELL_KEYS.join(", ")
                )));
            }
        }
        let mut cells = Vec::new();
        for &e in &embeddings {
            for &n in &encoders {
                let mut t = table.clone();
                if let Some(toml::Value::Table(o)) = overrides.get(&cell_key(e, n)) {
                    merge(&mut t, o);
                }
                t.insert("embedding".into(), e.name().into());
                t.insert("encoder".into(), n.name().into());
                cells.push(deserialize(t, base_dir)?);
            }
        }
        Ok(GridConfig {
            base,
            embeddings,
            encoders,
            cells,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, dir).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base.seed = seed;
        for c in &mut self.cells {
            c.seed = seed;
        }
        self
    }
}
