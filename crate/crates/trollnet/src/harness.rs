//! Experiment runs: data preparation, pathway construction, per-cell training
//! and result collection.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use trollnet_core::context_embed::train_bilm;
use trollnet_core::corpus::{
    build_vocabulary, encode, split_dataset, DatasetSplit, Document, EncodedSequence, RawRecord, Vocabulary,
};
use trollnet_core::encoders::EncoderKind;
use trollnet_core::metrics::MetricsReport;
use trollnet_core::model::{Example, ModelAssembly, ModelInput, Pathway, PathwayKind};
use trollnet_core::rng::derive_seed;
use trollnet_core::static_embed::{build_cooccurrence, train_glove};
use trollnet_core::train::{evaluate_model, train_model, EpochRecord, TrainConfig};
use trollnet_core::ParamGroups;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{cell_key, DataSection, ExperimentConfig, GridConfig};
use crate::ctx::{load_precomputed, CtxFile};
use crate::dataset::load_dataset;
use crate::error::{write_file, Error, Result};
use crate::table::{ResultsTable, TableCell, TableFormat};
use crate::vectors::load_embedding_text;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    /// Position of the record in the input file.
    pub index: usize,
    pub doc: Document,
    pub encoded: EncodedSequence,
}

/// Tokenized, split and id-encoded records. The vocabulary comes from the
/// training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub split: DatasetSplit<Item>,
    pub num_records: usize,
}

impl PreparedData {
    pub fn new(records: &[RawRecord], data: &DataSection, seed: u64) -> Result<Self> {
        let docs = records
            .iter()
            .enumerate()
            .map(|(i, r)| Document::from_record(r).map_err(|e| Error::Config(format!("record {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        let indices: Vec<usize> = (0..docs.len()).collect();
        let split = split_dataset(&indices, data.ratios, seed)?;
        let train_docs: Vec<Document> = split.train.iter().map(|&i| docs[i].clone()).collect();
        let vocab = build_vocabulary(&train_docs, data.min_count)?;
        let split = split.try_map(|i| -> Result<Item> {
            Ok(Item {
                index: i,
                encoded: encode(&docs[i].tokens, &vocab, data.max_len)?,
                doc: docs[i].clone(),
            })
        })?;
        Ok(PreparedData {
            vocab,
            max_len: data.max_len,
            split,
            num_records: records.len(),
        })
    }

    pub fn train_docs(&self) -> Vec<Document> {
        self.split.train.iter().map(|it| it.doc.clone()).collect()
    }

    /// Model inputs for every split. The precomputed pathway needs `ctx`,
    /// aligned to the input records.
    pub fn examples(&self, ctx: Option<&CtxFile>) -> Result<DatasetSplit<Example>> {
        if let Some(c) = ctx {
            check_ctx_count(c, self.num_records)?;
        }
        let to_example = |it: &Item| Example {
            input: match ctx {
                Some(c) => {
                    let layers = c.docs[it.index].fit_to(self.max_len);
                    ModelInput {
                        ids: it.encoded.ids.clone(),
                        valid_length: layers.valid_length(),
                        context: Some(layers),
                    }
                }
                None => ModelInput::from_ids(it.encoded.ids.clone(), it.encoded.valid_length),
            },
            label: it.doc.label,
        };
        Ok(DatasetSplit {
            train: self.split.train.iter().map(to_example).collect(),
            validation: self.split.validation.iter().map(to_example).collect(),
            test: self.split.test.iter().map(to_example).collect(),
            seed: self.split.seed,
        })
    }
}

pub(crate) fn check_ctx_count(ctx: &CtxFile, records: usize) -> Result<()> {
    if ctx.docs.len() != records {
        return Err(trollnet_core::Error::Shape {
            what: "precomputed documents vs data rows".into(),
            expected: records,
            actual: ctx.docs.len(),
        }
        .into());
    }
    Ok(())
}

/// Records and, when configured, precomputed layers for `config`.
pub fn load_inputs(config: &ExperimentConfig) -> Result<(Vec<RawRecord>, Option<CtxFile>)> {
    let path = config.data.data_path()?;
    let records = load_dataset(path, &config.data.options()?)?;
    let ctx = match &config.precomputed.path {
        Some(p) => Some(load_precomputed(p)?),
        None => None,
    };
    Ok((records, ctx))
}

/// Builds the embedding pathway named by `config.embedding`. Trained
/// pathways use the seed derived from the base seed and the embedding name.
pub fn build_pathway(config: &ExperimentConfig, data: &PreparedData, ctx: Option<&CtxFile>) -> Result<Pathway> {
    let seed = derive_seed(config.seed, config.embedding.name().as_bytes());
    match config.embedding {
        PathwayKind::GloveStatic => {
            let table = match &config.glove.vectors {
                Some(path) => load_embedding_text(path, config.glove.dim, &data.vocab)?.0,
                None => {
                    let cooc = build_cooccurrence(&data.train_docs(), &data.vocab, config.glove.window, config.glove.weighting)?;
                    train_glove(&cooc, &config.glove.train_config(seed))?.0
                }
            };
            Ok(Pathway::Static(table))
        }
        PathwayKind::BilmContextual => {
            let (params, _) = train_bilm(&data.train_docs(), &data.vocab, &config.bilm.train_config(seed))?;
            Ok(Pathway::bilm(params))
        }
        PathwayKind::PrecomputedContextual => {
            let ctx = ctx.ok_or_else(|| Error::Config("precomputed-contextual needs precomputed.path".into()))?;
            Ok(Pathway::precomputed(ctx.num_layers, ctx.dim))
        }
    }
}

/// Identifies the settings a pathway depends on, so cells can share it.
fn pathway_key(config: &ExperimentConfig) -> String {
    let section = match config.embedding {
        PathwayKind::GloveStatic => serde_json::to_string(&config.glove),
        PathwayKind::BilmContextual => serde_json::to_string(&config.bilm),
        PathwayKind::PrecomputedContextual => Ok(String::new()),
    };
    format!("{}:{}", config.embedding.name(), section.expect("config serializes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSuccess {
    pub metrics: MetricsReport,
    /// Parameters of the selected epoch, rounded to f32.
    pub model: ModelAssembly,
    pub selected_epoch: Option<usize>,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub embedding: PathwayKind,
    pub encoder: EncoderKind,
    pub seed: u64,
    pub outcome: std::result::Result<CellSuccess, String>,
    /// Epoch records produced before the cell finished or failed.
    pub log: Vec<EpochRecord>,
    pub seconds: f64,
}

impl RunResult {
    pub fn cell_name(&self) -> String {
        cell_key(self.embedding, self.encoder)
    }
}

/// Per-cell seed: a hash of the base seed and the cell's name.
pub fn cell_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.seed, config.cell_name().as_bytes())
}

/// Trains one cell on `examples` and scores the selected model on the test split.
pub fn run_cell(config: &ExperimentConfig, pathway: &Pathway, examples: &DatasetSplit<Example>) -> RunResult {
    let start = Instant::now();
    let seed = cell_seed(config);
    let mut log = Vec::new();
    let outcome = (|| -> Result<CellSuccess> {
        config.validate()?;
        let assembly = ModelAssembly::new(pathway.clone(), &config.encoder_config(), config.fine_tune_embeddings, seed)?;
        let train = TrainConfig { seed, ..config.train };
        let (mut model, history) = train_model(&assembly, examples, &train, &mut |r| log.push(*r))?;
        model.round_to_f32();
        let metrics = evaluate_model(&model, &examples.test)?;
        Ok(CellSuccess {
            metrics,
            model,
            selected_epoch: history.selected_epoch,
            epochs_run: history.epochs.len(),
        })
    })();
    RunResult {
        embedding: config.embedding,
        encoder: config.encoder,
        seed,
        outcome: outcome.map_err(|e| e.to_string()),
        log,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRun {
    pub results: Vec<RunResult>,
}

impl MatrixRun {
    pub fn table(&self) -> ResultsTable {
        ResultsTable::new(
            self.results
                .iter()
                .map(|r| TableCell {
                    embedding: r.embedding.name().to_string(),
                    encoder: r.encoder.name().to_string(),
                    outcome: r.outcome.as_ref().map(|s| s.metrics).map_err(Clone::clone),
                })
                .collect(),
        )
    }
}

/// Runs every cell of `grid` on `data`. Pathways are built once per distinct
/// embedding setting; a failure is recorded in the cells it affects.
pub fn run_matrix(grid: &GridConfig, data: &PreparedData, ctx: Option<&CtxFile>) -> MatrixRun {
    let parallel = grid.base.parallel;
    let mut keys: Vec<(String, &ExperimentConfig)> = Vec::new();
    for cell in &grid.cells {
        let key = pathway_key(cell);
        if !keys.iter().any(|(k, _)| *k == key) {
            keys.push((key, cell));
        }
    }
    let build = |(key, cfg): &(String, &ExperimentConfig)| {
        let built = build_pathway(cfg, data, ctx).and_then(|p| {
            let examples = data.examples(if p.kind() == PathwayKind::PrecomputedContextual { ctx } else { None })?;
            Ok((p, examples))
        });
        (key.clone(), built.map_err(|e| e.to_string()))
    };
    let pathways: BTreeMap<String, _> = if parallel {
        keys.par_iter().map(build).collect()
    } else {
        keys.iter().map(build).collect()
    };
    let run = |cell: &ExperimentConfig| match &pathways[&pathway_key(cell)] {
        Ok((pathway, examples)) => run_cell(cell, pathway, examples),
        Err(msg) => RunResult {
            embedding: cell.embedding,
            encoder: cell.encoder,
            seed: cell_seed(cell),
            outcome: Err(format!("embedding pathway: {msg}")),
            log: Vec::new(),
            seconds: 0.0,
        },
    };
    let results = if parallel {
        grid.cells.par_iter().map(run).collect()
    } else {
        grid.cells.iter().map(run).collect()
    };
    MatrixRun { results }
}

#[derive(Serialize)]
struct LogLine<'a> {
    cell: &'a str,
    embedding: &'a str,
    encoder: &'a str,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

#[derive(Serialize)]
struct Summary<'a> {
    cell: String,
    seed: u64,
    status: String,
    metrics: Option<&'a MetricsReport>,
    selected_epoch: Option<usize>,
    epochs_run: usize,
    seconds: f64,
}

/// One JSON object per epoch per cell, cells in grid order.
pub fn run_log(run: &MatrixRun) -> String {
    let mut out = String::new();
    for r in &run.results {
        let name = r.cell_name();
        for record in &r.log {
            let line = LogLine {
                cell: &name,
                embedding: r.embedding.name(),
                encoder: r.encoder.name(),
                record,
            };
            out.push_str(&serde_json::to_string(&line).expect("log line serializes"));
            out.push('\n');
        }
    }
    out
}

fn summaries(run: &MatrixRun) -> String {
    let rows: Vec<Summary> = run
        .results
        .iter()
        .map(|r| Summary {
            cell: r.cell_name(),
            seed: r.seed,
            status: match &r.outcome {
                Ok(_) => "ok".into(),
                Err(m) => format!("failed: {m}"),
            },
            metrics: r.outcome.as_ref().ok().map(|s| &s.metrics),
            selected_epoch: r.outcome.as_ref().ok().and_then(|s| s.selected_epoch),
            epochs_run: r.outcome.as_ref().map_or(r.log.len(), |s| s.epochs_run),
            seconds: r.seconds,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("summary serializes")
}

/// Writes `table.md`, `table.csv`, `run_log.jsonl`, `results.json` and a
/// checkpoint per successful cell under `out`.
pub fn write_outputs(out: &Path, run: &MatrixRun, data: &PreparedData) -> Result<()> {
    let table = run.table();
    write_file(&out.join("table.md"), table.emit(TableFormat::Markdown).as_bytes())?;
    write_file(&out.join("table.csv"), table.emit(TableFormat::Csv).as_bytes())?;
    write_file(&out.join("run_log.jsonl"), run_log(run).as_bytes())?;
    write_file(&out.join("results.json"), summaries(run).as_bytes())?;
    for r in &run.results {
        if let Ok(s) = &r.outcome {
            let name = format!("{}__{}.tgck", r.embedding.name(), r.encoder.name());
            let ck = Checkpoint::new(s.model.clone(), data.vocab.clone(), data.max_len, r.seed, s.selected_epoch);
            save_checkpoint(&out.join("checkpoints").join(name), &ck)?;
        }
    }
    Ok(())
}

/// Loads the data named by the grid's base config and runs the whole grid.
pub fn run_grid(grid: &GridConfig) -> Result<(MatrixRun, PreparedData)> {
    grid.base.validate()?;
    let (records, ctx) = load_inputs(&grid.base)?;
    let data = PreparedData::new(&records, &grid.base.data, grid.base.seed)?;
    let run = run_matrix(grid, &data, ctx.as_ref());
    Ok((run, data))
}

/// Scores `records` with a checkpoint, encoding text with its vocabulary.
pub fn evaluate_checkpoint(ck: &Checkpoint, records: &[RawRecord], ctx: Option<&CtxFile>) -> Result<MetricsReport> {
    let precomputed = ck.assembly.pathway.kind() == PathwayKind::PrecomputedContextual;
    let ctx = match (precomputed, ctx) {
        (true, None) => return Err(Error::Config("this checkpoint needs precomputed layers (--ctx)".into())),
        (true, Some(c)) => {
            check_ctx_count(c, records.len())?;
            Some(c)
        }
        (false, _) => None,
    };
    let mut examples = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let doc = Document::from_record(r).map_err(|e| Error::Config(format!("record {}: {e}", i + 1)))?;
        let enc = encode(&doc.tokens, &ck.vocab, ck.max_len)?;
        let input = match ctx {
            Some(c) => {
                let layers = c.docs[i].fit_to(ck.max_len);
                ModelInput {
                    ids: enc.ids,
                    valid_length: layers.valid_length(),
                    context: Some(layers),
                }
            }
            None => ModelInput::from_ids(enc.ids, enc.valid_length),
        };
        examples.push(Example { input, label: doc.label });
    }
    Ok(evaluate_model(&ck.assembly, &examples)?)
}

/// Fails with a shape error when the checkpoint's encoder differs from the
/// one `config` would build.
pub fn check_encoder_matches(ck: &Checkpoint, config: &ExperimentConfig) -> Result<()> {
    let found = &ck.assembly.encoder;
    if found.kind() != config.encoder {
        return Err(Error::Config(format!(
            "checkpoint encoder is {}, config asks for {}",
            found.kind().name(),
            config.encoder.name()
        )));
    }
    let expected = config.encoder_config().build(found.input_dim(), 0)?;
    let shapes = |p: &dyn ParamGroups| {
        let mut v = Vec::new();
        p.visit("", &mut |n, s, _| v.push((n.to_string(), s.to_vec())));
        v
    };
    for ((name, want), (_, got)) in shapes(&expected).iter().zip(shapes(found).iter()) {
        if want != got {
            return Err(trollnet_core::Error::Shape {
                what: format!("checkpoint encoder group {name} (config {want:?}, checkpoint {got:?})"),
                expected: want.iter().product(),
                actual: got.iter().product(),
            }
            .into());
        }
    }
    if expected.output_dim() != found.output_dim() || shapes(&expected).len() != shapes(found).len() {
        return Err(trollnet_core::Error::Shape {
            what: "checkpoint encoder output dim".into(),
            expected: expected.output_dim(),
            actual: found.output_dim(),
        }
        .into());
    }
    Ok(())
}
