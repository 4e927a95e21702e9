//! `probe`: command-line front end for the probing toolkit.
//!
//! Exit status: 0 on success, 2 when a run finished with failed cells, 1 on
//! any hard error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use chess_probe::concepts::ConceptId;
use chess_probe::cpaf::{self, CpafFile};
use chess_probe::dataset::{
    load_c960, load_epd, make_folds, to_epd_string, write_c960, LabeledPosition, Scenario, ThemeMap, Variant,
    C960_HEADER,
};
use chess_probe::experiment::{self, RunConfig};
use chess_probe::probes::Method;
use chess_probe::synth::{balanced_labels, generate, generate_for_dataset, synthetic_corpus, PlantConfig};

#[derive(Parser)]
#[command(name = "probe", version, about = "Probe chess-transformer activations for strategic concepts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the concept × method × scenario × layer × fold grid.
    Run(Box<RunArgs>),
    /// Generate a planted-signal activation file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a CPAF, EPD or c960 file.
    Validate {
        #[arg(long)]
        file: PathBuf,
        /// Theme map for EPD files.
        #[arg(long)]
        themes: Option<PathBuf>,
    },
    /// Write a stratified fold assignment as TSV.
    Folds {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        themes: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    scenario: Option<Vec<Scenario>>,
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    concept: Option<Vec<ConceptId>>,
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Use every layer of the activation files.
    #[arg(long)]
    all_layers: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    std_acts: Option<PathBuf>,
    #[arg(long)]
    c960_acts: Option<PathBuf>,
    #[arg(long)]
    std_data: Option<PathBuf>,
    #[arg(long)]
    c960_data: Option<PathBuf>,
    #[arg(long)]
    themes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    save_probes: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut c: RunConfig = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.scenario {
            c.scenarios = v;
        }
        if let Some(v) = self.method {
            c.methods = v;
        }
        if let Some(v) = self.concept {
            c.concepts = v;
        }
        if let Some(v) = self.layers {
            c.layers = v;
        }
        c.all_layers |= self.all_layers;
        c.save_probes |= self.save_probes;
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        let paths = [
            (self.std_acts, &mut c.std_acts),
            (self.c960_acts, &mut c.c960_acts),
            (self.std_data, &mut c.std_data),
            (self.c960_data, &mut c.c960_data),
            (self.themes, &mut c.themes),
        ];
        for (flag, slot) in paths {
            if flag.is_some() {
                *slot = flag;
            }
        }
        if let Some(v) = self.out {
            c.out = v;
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        Ok(c)
    }
}

/// `probe synth` configuration. Exactly one of `labels` or `corpus`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    plant: PlantConfig,
    labels: Option<LabelSpec>,
    corpus: Option<CorpusSpec>,
}

/// `n` balanced ±1 labels for one concept.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelSpec {
    n: usize,
    concept: String,
    #[serde(default)]
    seed: u64,
}

/// A six-concept labeled corpus; the dataset file is written next to the
/// activation file (`.epd` for standard, `.c960` for Chess960).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusSpec {
    variant: Variant,
    per_concept: usize,
    #[serde(default)]
    seed: u64,
}

fn synth(config: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: SynthConfig = toml::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let (meta, records) = match (&cfg.labels, &cfg.corpus) {
        (Some(l), None) => {
            let concept: ConceptId = l.concept.parse().map_err(anyhow::Error::msg)?;
            generate(&cfg.plant, &balanced_labels(l.n, l.seed), concept)?
        }
        (None, Some(c)) => {
            let corpus = synthetic_corpus(c.variant, c.per_concept, c.seed)?;
            let data_path = match c.variant {
                Variant::Standard => out.with_extension("epd"),
                Variant::Chess960 => out.with_extension("c960"),
            };
            match c.variant {
                Variant::Standard => fs::write(&data_path, to_epd_string(&corpus))
                    .with_context(|| format!("writing {}", data_path.display()))?,
                Variant::Chess960 => write_c960(&data_path, &corpus)?,
            }
            println!("wrote {} ({} positions)", data_path.display(), corpus.len());
            generate_for_dataset(&cfg.plant, &corpus)?
        }
        _ => bail!("synth config needs exactly one of [labels] or [corpus]"),
    };
    let n = cpaf::write(out, &meta, &records)?;
    println!(
        "wrote {} ({n} records, L={} T={} D={})",
        out.display(),
        meta.layers,
        meta.tokens,
        meta.dim
    );
    Ok(())
}

enum FileKind {
    Cpaf,
    C960,
    Epd,
}

fn sniff(path: &Path) -> Result<FileKind> {
    if path.extension().is_some_and(|e| e == "cpaf") {
        return Ok(FileKind::Cpaf);
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"CPAF") {
        return Ok(FileKind::Cpaf);
    }
    let text = String::from_utf8_lossy(&bytes);
    let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    Ok(if first == C960_HEADER || path.extension().is_some_and(|e| e == "c960") {
        FileKind::C960
    } else {
        FileKind::Epd
    })
}

fn themes(path: Option<&Path>) -> Result<ThemeMap> {
    Ok(match path {
        Some(p) => ThemeMap::load(p)?,
        None => ThemeMap::default(),
    })
}

fn load_dataset(path: &Path, theme_path: Option<&Path>) -> Result<Vec<LabeledPosition>> {
    Ok(match sniff(path)? {
        FileKind::Cpaf => bail!("{} is an activation file, not a dataset", path.display()),
        FileKind::C960 => load_c960(path)?.records,
        FileKind::Epd => load_epd(path, &themes(theme_path)?)?.records,
    })
}

fn validate(path: &Path, theme_path: Option<&Path>) -> Result<()> {
    match sniff(path)? {
        FileKind::Cpaf => {
            let f = CpafFile::open(path)?;
            for r in f.records() {
                r?;
            }
            let m = f.meta();
            println!(
                "{}: CPAF v1, {} records, L={} T={} D={}, producer {:?}, rules {}",
                path.display(),
                f.len(),
                m.layers,
                m.tokens,
                m.dim,
                m.producer,
                m.rule_version.as_deref().unwrap_or("-")
            );
        }
        FileKind::C960 => {
            let load = load_c960(path)?;
            println!(
                "{}: c960, {} records, per concept {:?}",
                path.display(),
                load.records.len(),
                load.counts
            );
            for w in &load.warnings {
                println!("warning: {w}");
            }
        }
        FileKind::Epd => {
            let load = load_epd(path, &themes(theme_path)?)?;
            println!(
                "{}: EPD, {} records, {} skipped (theme not mapped)",
                path.display(),
                load.records.len(),
                load.skipped
            );
        }
    }
    Ok(())
}

fn folds(data: &Path, k: usize, seed: u64, out: &Path, theme_path: Option<&Path>) -> Result<()> {
    let records = load_dataset(data, theme_path)?;
    let plan = make_folds(&records, k, seed)?;
    fs::write(out, plan.to_tsv()).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({} assignments, fold sizes {:?})", out.display(), plan.assignments.len(), plan.fold_sizes());
    Ok(())
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let config = args.into_config()?;
    let results = experiment::run(&config)?;
    for path in experiment::write_outputs(&results, &config.out)? {
        println!("wrote {}", path.display());
    }
    let failed = results.failures();
    println!("{} cells, {failed} failed", results.rows.len());
    if failed > 0 {
        for r in results.rows.iter().filter(|r| r.outcome.is_err()) {
            eprintln!("failed {}: {}", r.key, r.outcome.as_ref().unwrap_err());
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(*args),
        Command::Synth { config, out } => synth(&config, &out).map(|_| ExitCode::SUCCESS),
        Command::Validate { file, themes } => validate(&file, themes.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Folds {
            data,
            k,
            seed,
            out,
            themes,
        } => folds(&data, k, seed, &out, themes.as_deref()).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
