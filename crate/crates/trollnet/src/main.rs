use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trollnet::checkpoint::{load_bilm, load_checkpoint, save_bilm};
use trollnet::config::{parse_delimiter, GridConfig};
use trollnet::ctx::{load_precomputed, save_precomputed, CtxFile};
use trollnet::dataset::{load_dataset, write_dataset, Column, DatasetOptions};
use trollnet::error::{Error, Result};
use trollnet::harness::{check_encoder_matches, evaluate_checkpoint, run_grid, write_outputs};
use trollnet::synth;
use trollnet::table::TableFormat;
use trollnet::vectors::write_embedding_text;
use trollnet_core::context_embed::{run_bilm, train_bilm, BiLmConfig, ContextualLayers};
use trollnet_core::corpus::{build_vocabulary, encode, Document, RawRecord};
use trollnet_core::gradcheck::assembly_suite;
use trollnet_core::static_embed::{build_cooccurrence, train_glove, GloveTrainConfig, Weighting};
use trollnet_core::Mat;

#[derive(Parser)]
#[command(name = "trollnet", version, about = "Embedding × encoder text classification experiments")]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Labeled TSV or CSV file.
    #[arg(long)]
    data: PathBuf,
    /// "tab", "comma" or one character; defaults from the file extension.
    #[arg(long)]
    delimiter: Option<String>,
    /// The first row holds column names.
    #[arg(long)]
    header: bool,
    /// Text column: 0-based index or header name.
    #[arg(long, default_value = "0")]
    text_col: String,
    #[arg(long, default_value = "1")]
    label_col: String,
    #[arg(long, default_value = "1")]
    pos_label: String,
    #[arg(long, default_value = "0")]
    neg_label: String,
}

impl DataArgs {
    fn options(&self) -> Result<DatasetOptions> {
        let base = DatasetOptions::for_path(&self.data);
        Ok(DatasetOptions {
            delimiter: match &self.delimiter {
                Some(d) => parse_delimiter(d)?,
                None => base.delimiter,
            },
            has_header: self.header,
            text_col: self.text_col.parse::<Column>().expect("infallible"),
            label_col: self.label_col.parse::<Column>().expect("infallible"),
            pos_label: self.pos_label.clone(),
            neg_label: self.neg_label.clone(),
        })
    }

    fn load(&self) -> Result<Vec<RawRecord>> {
        let records = load_dataset(&self.data, &self.options()?)?;
        eprintln!("{}: {} records", self.data.display(), records.len());
        Ok(records)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Marker,
    Polysemy,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    InverseDistance,
    Uniform,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the base cell of a config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a labeled file with a checkpoint and print the metrics as JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Config the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Precomputed layers for the data rows.
        #[arg(long)]
        ctx: Option<PathBuf>,
    },
    /// Run every cell of a grid config and write result tables.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run cells on a thread pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Train static vectors on a labeled file and write them as text.
    GloveTrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 100.0)]
        x_max: f64,
        #[arg(long, default_value_t = 0.75)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "inverse-distance")]
        weighting: WeightingArg,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
    },
    /// Train a bidirectional LSTM language model and save it.
    BilmTrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
    },
    /// Run a saved bi-LM over a labeled file and write its layers as CTX1.
    CtxExport {
        #[arg(long)]
        bilm: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
    },
    /// Convert JSON-lines layers (one `[layer][token][dim]` array per line) to CTX1.
    CtxImport {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients of every pathway × encoder assembly.
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write a generated dataset.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write stand-in contextual layers for the rows.
        #[arg(long)]
        ctx: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        ctx_dim: usize,
    },
}

fn docs_of(records: &[RawRecord]) -> Result<Vec<Document>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| Document::from_record(r).map_err(|e| Error::Config(format!("record {}: {e}", i + 1))))
        .collect()
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn load_grid(path: &Path, seed: Option<u64>) -> Result<GridConfig> {
    let grid = GridConfig::load(path)?;
    Ok(match seed {
        Some(s) => grid.with_seed(s),
        None => grid,
    })
}

fn out_dir(flag: Option<PathBuf>, grid: &GridConfig) -> Result<PathBuf> {
    flag.or_else(|| grid.base.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out` in the config".into()))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { config, out } => {
            let mut grid = load_grid(&config, seed)?;
            let out = out_dir(out, &grid)?;
            grid.embeddings = vec![grid.base.embedding];
            grid.encoders = vec![grid.base.encoder];
            grid.cells = vec![grid.base.clone()];
            let (run, data) = run_grid(&grid)?;
            write_outputs(&out, &run, &data)?;
            let result = &run.results[0];
            match &result.outcome {
                Ok(s) => println!("{}", json(&s.metrics)),
                Err(msg) => return Err(Error::Runtime(format!("{}: {msg}", result.cell_name()))),
            }
        }
        Command::Evaluate { checkpoint, data, config, ctx } => {
            let ck = load_checkpoint(&checkpoint)?;
            if let Some(path) = config {
                let grid = load_grid(&path, seed)?;
                let kinds = (ck.assembly.pathway.kind(), ck.assembly.encoder.kind());
                let cell = grid.cells.iter().find(|c| (c.embedding, c.encoder) == kinds).unwrap_or(&grid.base);
                check_encoder_matches(&ck, cell)?;
            }
            let records = data.load()?;
            let ctx = ctx.map(|p| load_precomputed(&p)).transpose()?;
            println!("{}", json(&evaluate_checkpoint(&ck, &records, ctx.as_ref())?));
        }
        Command::Matrix { config, out, parallel } => {
            let mut grid = load_grid(&config, seed)?;
            let out = out_dir(out, &grid)?;
            grid.base.parallel |= parallel;
            let (run, data) = run_grid(&grid)?;
            write_outputs(&out, &run, &data)?;
            print!("{}", run.table().emit(TableFormat::Markdown));
            let failed = run.results.iter().filter(|r| r.outcome.is_err()).count();
            eprintln!("{} cells, {failed} failed; tables in {}", run.results.len(), out.display());
        }
        Command::GloveTrain {
            data,
            out,
            window,
            dim,
            epochs,
            lr,
            x_max,
            alpha,
            weighting,
            min_count,
        } => {
            let docs = docs_of(&data.load()?)?;
            let vocab = build_vocabulary(&docs, min_count)?;
            let weighting = match weighting {
                WeightingArg::InverseDistance => Weighting::InverseDistance,
                WeightingArg::Uniform => Weighting::Uniform,
            };
            let cooc = build_cooccurrence(&docs, &vocab, window, weighting)?;
            let config = GloveTrainConfig {
                dim,
                window,
                x_max,
                alpha,
                learning_rate: lr,
                epochs,
                seed: seed.unwrap_or(0),
            };
            let (table, report) = train_glove(&cooc, &config)?;
            write_embedding_text(&out, &table, &vocab)?;
            eprintln!(
                "vocabulary {}, {} co-occurrence pairs, loss {:.6} -> {:.6}",
                vocab.len(),
                cooc.len(),
                report.initial_loss(),
                report.final_loss()
            );
        }
        Command::BilmTrain {
            data,
            out,
            dim,
            hidden,
            epochs,
            lr,
            batch_size,
            min_count,
        } => {
            let docs = docs_of(&data.load()?)?;
            let vocab = build_vocabulary(&docs, min_count)?;
            let config = BiLmConfig {
                dim,
                hidden,
                learning_rate: lr,
                epochs,
                batch_size,
                seed: seed.unwrap_or(0),
                ..Default::default()
            };
            let (params, report) = train_bilm(&docs, &vocab, &config)?;
            save_bilm(&out, &params, &vocab, config.seed)?;
            eprintln!(
                "vocabulary {}, perplexity {:.4} -> {:.4}",
                vocab.len(),
                report.initial_perplexity(),
                report.final_perplexity()
            );
        }
        Command::CtxExport { bilm, data, out, max_len } => {
            let (params, vocab) = load_bilm(&bilm)?;
            let docs = docs_of(&data.load()?)?;
            let mut layers = Vec::with_capacity(docs.len());
            for doc in &docs {
                let enc = encode(&doc.tokens, &vocab, max_len)?;
                layers.push(run_bilm(&params, &enc.ids, enc.valid_length)?);
            }
            let file = CtxFile::new(params.num_layers(), params.context_dim(), layers)?;
            save_precomputed(&out, &file)?;
            eprintln!("{} documents, L={}, D={}", file.docs.len(), file.num_layers, file.dim);
        }
        Command::CtxImport { input, out } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let mut docs = Vec::new();
            let mut shape = None;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let bad = |m: String| Error::format(&input, format!("line {}: {m}", i + 1));
                let doc: Vec<Vec<Vec<f64>>> = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
                let t = doc.first().map_or(0, Vec::len);
                let d = doc.first().and_then(|l| l.first()).map_or(0, Vec::len);
                let mats = doc
                    .iter()
                    .map(|layer| if layer.is_empty() { Ok(Mat::zeros(0, d)) } else { Mat::from_rows(layer) })
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(e.to_string()))?;
                let layers = ContextualLayers::new(mats, t).map_err(|e| bad(e.to_string()))?;
                let s = (layers.num_layers(), layers.dim());
                if t > 0 && *shape.get_or_insert(s) != s {
                    return Err(bad(format!("shape {s:?} differs from earlier lines {:?}", shape.unwrap())));
                }
                docs.push(layers);
            }
            let (l, d) = shape.ok_or_else(|| Error::format(&input, "no non-empty document to take L and D from"))?;
            let docs = docs
                .into_iter()
                .map(|doc| if doc.is_empty() { ContextualLayers::zeros(l, 0, d) } else { doc })
                .collect();
            let file = CtxFile::new(l, d, docs)?;
            save_precomputed(&out, &file)?;
            eprintln!("{} documents, L={l}, D={d}", file.docs.len());
        }
        Command::GradCheck { tolerance } => {
            let mut failed = 0;
            for entry in assembly_suite(seed.unwrap_or(0))? {
                let ok = entry.report.passes(tolerance);
                failed += usize::from(!ok);
                println!(
                    "{} {}/{}: max relative error {:.3e} over {} entries",
                    if ok { "PASS" } else { "FAIL" },
                    entry.pathway.name(),
                    entry.encoder.name(),
                    entry.report.max_relative_error,
                    entry.report.entries_checked
                );
            }
            if failed > 0 {
                return Err(Error::Runtime(format!("{failed} assemblies exceed relative error {tolerance}")));
            }
        }
        Command::Synth { kind, n, out, ctx, ctx_dim } => {
            let seed = seed.unwrap_or(0);
            let records = match kind {
                SynthKind::Marker => synth::marker_dataset(n, seed),
                SynthKind::Polysemy => synth::polysemy_dataset(n, seed),
            };
            write_dataset(&out, &records, &DatasetOptions::for_path(&out))?;
            if let Some(path) = ctx {
                save_precomputed(&path, &synth::synthetic_context(&records, ctx_dim, seed)?)?;
            }
            eprintln!("wrote {} records to {}", records.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
