//! `uprobe`: command-line front end for the probing workbench.
//!
//! Each subcommand wraps one library operation, writes CSV/JSON artifacts
//! under `--out-dir` and records a `<command>.manifest.json` next to them.
//! Exit status is 0 on success, 2 for usage or validation errors and 1 for
//! internal failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use uprobe_core::agreement::{
    amnesic_na_sweep, cross_category_sweep, info_loss_matrix, matched_random, ControlConfig, InfoLossMatrix,
    PositionKind, SweepRow,
};
use uprobe_core::amnesic::{inlp, read_projector, write_projector, AmnesicProjector};
use uprobe_core::attention::{range_sweep, triptych_sweep, MaskKind, MaskMode};
use uprobe_core::config::ToolkitConfig;
use uprobe_core::corpus::{generate_corpus, load_dataset, split, write_dataset, AgreementInstance};
use uprobe_core::model::{collect_representations_with, load_checkpoint, save_checkpoint, train_mlm, Model};
use uprobe_core::probes::{cosine_matrix, cross_evaluate, probe_report, read_probe, train_probe, write_probe};
use uprobe_core::report::{self, read_json, write_json, RunManifest};
use uprobe_core::repr::{manifest_path, read_representations, write_representations, Category};
use uprobe_core::vocab::Vocab;
use uprobe_core::{Error, Result};

#[derive(Parser)]
#[command(name = "uprobe", version, about = "Usage-based probing workbench")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML (or `.json`) configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving all artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic agreement corpus (JSONL).
    GenCorpus(GenCorpusArgs),
    /// Train the masked language model.
    TrainLm(TrainLmArgs),
    /// Dump hidden representations (REPR) per category and layer.
    DumpReps(DumpRepsArgs),
    /// Train linear probes and report V-information.
    TrainProbes(TrainProbesArgs),
    /// Cosine similarity of probe directions.
    Cosine(CosineArgs),
    /// Evaluate every probe on every representation set of its layer.
    CrossEval(CrossEvalArgs),
    /// Iterative nullspace projection (PROJ).
    Inlp(InlpArgs),
    /// NA drop of projectors applied at one position, with random controls.
    AmnesicSweep(AmnesicSweepArgs),
    /// NA drop of every projector at every position.
    CrossSweep(CrossSweepArgs),
    /// Probe accuracy lost downstream of each projection.
    InfoLoss(InfoLossArgs),
    /// Attention-cut NA drops over all layer ranges.
    AttnSweep(AttnSweepArgs),
    /// Distance-stratified attention cuts.
    Distance(DistanceArgs),
    /// Summary tables built from earlier artifacts.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus(_) => "gen-corpus",
            Command::TrainLm(_) => "train-lm",
            Command::DumpReps(_) => "dump-reps",
            Command::TrainProbes(_) => "train-probes",
            Command::Cosine(_) => "cosine",
            Command::CrossEval(_) => "cross-eval",
            Command::Inlp(_) => "inlp",
            Command::AmnesicSweep(_) => "amnesic-sweep",
            Command::CrossSweep(_) => "cross-sweep",
            Command::InfoLoss(_) => "info-loss",
            Command::AttnSweep(_) => "attn-sweep",
            Command::Distance(_) => "distance",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Args, Serialize)]
struct GenCorpusArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value = "corpus.jsonl")]
    out: PathBuf,
    /// Also write stratified `.train`, `.dev` and `.test` partitions.
    #[arg(long)]
    split: bool,
}

#[derive(Args, Serialize)]
struct TrainLmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "model.upml")]
    out: PathBuf,
    /// Overrides the configured number of optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Serialize)]
struct DumpRepsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    category: Vec<Category>,
    /// Hidden-state indices (0 = embeddings); default all.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    #[arg(long, default_value = "reps")]
    out_prefix: String,
}

#[derive(Args, Serialize)]
struct TrainProbesArgs {
    /// Training sets, paired in order with `--dev`.
    #[arg(long, num_args = 1.., required = true)]
    train: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    dev: Vec<PathBuf>,
    #[arg(long, default_value = "probe")]
    out_prefix: String,
}

#[derive(Args, Serialize)]
struct CosineArgs {
    #[arg(long, num_args = 1.., required = true)]
    probes: Vec<PathBuf>,
    #[arg(long, default_value = "cosine.csv")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CrossEvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    probes: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    reps: Vec<PathBuf>,
    #[arg(long, default_value = "cross_eval.csv")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct InlpArgs {
    #[arg(long)]
    reps: PathBuf,
    /// Held-out set for the stopping rule.
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args, Serialize)]
struct AmnesicSweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    projectors: Vec<PathBuf>,
    #[arg(long)]
    position: PositionKind,
    /// Output stem; `.csv` and `.json` are appended.
    #[arg(long, default_value = "sweep")]
    out: String,
}

#[derive(Args, Serialize)]
struct CrossSweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    projectors: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "cue,target")]
    positions: Vec<PositionKind>,
    #[arg(long, default_value = "cross_sweep")]
    out: String,
}

#[derive(Args, Serialize)]
struct InfoLossArgs {
    #[arg(long)]
    model: PathBuf,
    /// Probe training sentences.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    projectors: Vec<PathBuf>,
    #[arg(long)]
    position: PositionKind,
    /// Category the probes read.
    #[arg(long)]
    category: Category,
    /// Replace each projector by its matched random control.
    #[arg(long)]
    random: bool,
    /// Score intervened layers with the unintervened probes.
    #[arg(long)]
    reuse_probes: bool,
    #[arg(long, default_value = "info_loss")]
    out: String,
}

#[derive(Args, Serialize)]
struct AttnSweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "target_to_cue,all_to_cue")]
    kinds: Vec<MaskKind>,
    #[arg(long, default_value = "post_softmax")]
    mode: MaskMode,
    #[arg(long, default_value = "attn")]
    out: String,
}

#[derive(Args, Serialize)]
struct DistanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "all_to_cue")]
    kind: MaskKind,
    #[arg(long, default_value = "post_softmax")]
    mode: MaskMode,
    #[arg(long, default_value = "distance")]
    out: String,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ReportKind {
    Table2,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    #[arg(long)]
    kind: ReportKind,
    /// Sweep JSON files from `amnesic-sweep` or `cross-sweep`.
    #[arg(long, num_args = 1.., required = true)]
    sweeps: Vec<PathBuf>,
    /// Info-loss JSON files of the amnesic projectors.
    #[arg(long, num_args = 1..)]
    info_loss: Vec<PathBuf>,
    /// Info-loss JSON files of the random controls.
    #[arg(long, num_args = 1..)]
    info_loss_random: Vec<PathBuf>,
    #[arg(long, default_value = "table2")]
    out: String,
}

/// Shared state of one invocation.
struct Run {
    seed: u64,
    config: ToolkitConfig,
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn out(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Checks that an input exists and records its hash.
    fn input(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Input(format!("{} does not exist", path.display())));
        }
        self.manifest.input(path)
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest.output(path)
    }

    fn control(&self) -> ControlConfig {
        ControlConfig {
            seed: self.seed,
            ..self.config.control
        }
    }

    fn dataset(&mut self, path: &Path) -> Result<Vec<AgreementInstance>> {
        self.input(path)?;
        load_dataset(path)
    }

    fn model(&mut self, path: &Path) -> Result<(Model, Vocab)> {
        self.input(path)?;
        load_checkpoint(path)
    }

    fn reps(&mut self, path: &Path) -> Result<uprobe_core::repr::RepresentationSet> {
        self.input(path)?;
        self.input(&manifest_path(path))?;
        read_representations(path)
    }

    fn projectors(&mut self, paths: &[PathBuf]) -> Result<Vec<AmnesicProjector>> {
        paths
            .iter()
            .map(|p| {
                self.input(p)?;
                read_projector(p)
            })
            .collect()
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, name: impl AsRef<Path>, value: &T) -> Result<()> {
        let path = self.out(name);
        write_json(&path, value)?;
        self.output(&path)
    }
}

fn with_suffix(stem: &str, suffix: &str) -> String {
    format!("{stem}{suffix}")
}

fn execute(run: &mut Run, command: &Command) -> Result<()> {
    match command {
        Command::GenCorpus(a) => {
            let data = generate_corpus(&run.config.grammar, a.n, run.seed)?;
            let out = run.out(&a.out);
            write_dataset(&out, &data)?;
            run.output(&out)?;
            if a.split {
                let part = split(&data, run.config.split.train, run.config.split.dev, run.seed)?;
                let (train, dev, test) = part.select(&data);
                for (name, items) in [("train", train), ("dev", dev), ("test", test)] {
                    let path = out.with_extension(format!("{name}.jsonl"));
                    write_dataset(&path, &items)?;
                    run.output(&path)?;
                }
            }
        }
        Command::TrainLm(a) => {
            let corpus = run.dataset(&a.corpus)?;
            let vocab = Vocab::from_grammar(&run.config.grammar)?;
            let mut schedule = run.config.train.clone();
            if let Some(steps) = a.steps {
                schedule.steps = steps;
            }
            let model_config = run.config.model.model_config(&vocab, run.seed);
            let (model, train_report) = train_mlm(model_config, &corpus, &vocab, &schedule)?;
            let out = run.out(&a.out);
            save_checkpoint(&out, &model, &vocab)?;
            run.output(&out)?;
            run.write_json(with_suffix(&a.out.display().to_string(), ".train.json"), &train_report)?;
        }
        Command::DumpReps(a) => {
            let (model, vocab) = run.model(&a.model)?;
            let data = run.dataset(&a.data)?;
            let layers: Vec<usize> = if a.layers.is_empty() {
                (0..=model.config().n_layers).collect()
            } else {
                a.layers.clone()
            };
            for &category in &a.category {
                let sets = collect_representations_with(&model, &vocab, &data, category, &layers, &[])?;
                for set in sets {
                    let path = run.out(format!("{}.{}.l{}.repr", a.out_prefix, category, set.layer));
                    write_representations(&path, &set)?;
                    run.output(&path)?;
                    run.output(&manifest_path(&path))?;
                }
            }
        }
        Command::TrainProbes(a) => {
            if a.train.len() != a.dev.len() {
                return Err(Error::Input(format!(
                    "{} training sets but {} dev sets",
                    a.train.len(),
                    a.dev.len()
                )));
            }
            let mut rows = Vec::new();
            for (t, d) in a.train.iter().zip(&a.dev) {
                let train = run.reps(t)?;
                let dev = run.reps(d)?;
                let probe = train_probe(&train, &dev, &run.config.probe)?;
                rows.push(probe_report(&probe, &dev)?);
                let path = run.out(format!("{}.{}.l{}.json", a.out_prefix, probe.category, probe.layer));
                write_probe(&path, &probe)?;
                run.output(&path)?;
            }
            let path = run.out(format!("{}.report.csv", a.out_prefix));
            report::write_probe_report_csv(&path, &rows)?;
            run.output(&path)?;
        }
        Command::Cosine(a) => {
            let probes = read_probes(run, &a.probes)?;
            let m = cosine_matrix(&probes)?;
            let path = run.out(&a.out);
            report::write_cosine_csv(&path, &probes, &m)?;
            run.output(&path)?;
        }
        Command::CrossEval(a) => {
            let probes = read_probes(run, &a.probes)?;
            let sets = a.reps.iter().map(|p| run.reps(p)).collect::<Result<Vec<_>>>()?;
            let lexicon = run.config.grammar.lexicon()?;
            let rows = cross_evaluate(&probes, &sets, &|w: &str| lexicon.lemma(w).to_string())?;
            let path = run.out(&a.out);
            report::write_cross_eval_csv(&path, &rows)?;
            run.output(&path)?;
        }
        Command::Inlp(a) => {
            let train = run.reps(&a.reps)?;
            let dev = run.reps(&a.dev)?;
            let mut rule = run.config.inlp;
            rule.eps = a.eps.unwrap_or(rule.eps);
            rule.max_iter = a.max_iter.unwrap_or(rule.max_iter);
            let proj = inlp(&train, &dev, &rule, &run.config.probe)?;
            log::info!("stop reason: {} after {} direction(s)", proj.stop_reason, proj.k());
            let path = run.out(&a.out);
            write_projector(&path, &proj)?;
            run.output(&path)?;
        }
        Command::AmnesicSweep(a) => {
            let (model, vocab) = run.model(&a.model)?;
            let data = run.dataset(&a.data)?;
            let projectors = run.projectors(&a.projectors)?;
            let rows = amnesic_na_sweep(&model, &vocab, &data, &projectors, a.position, &run.control())?;
            write_sweep(run, &a.out, &rows)?;
        }
        Command::CrossSweep(a) => {
            let (model, vocab) = run.model(&a.model)?;
            let data = run.dataset(&a.data)?;
            let projectors = run.projectors(&a.projectors)?;
            let rows = cross_category_sweep(&model, &vocab, &data, &projectors, &a.positions, &run.control())?;
            write_sweep(run, &a.out, &rows)?;
        }
        Command::InfoLoss(a) => {
            let (model, vocab) = run.model(&a.model)?;
            let train = run.dataset(&a.train)?;
            let dev = run.dataset(&a.dev)?;
            let mut projectors = run.projectors(&a.projectors)?;
            if a.random {
                let control = run.control();
                projectors = projectors
                    .iter()
                    .map(|p| matched_random(p, &control, 0))
                    .collect::<Result<_>>()?;
            }
            let mut opts = run.config.info_loss;
            opts.retrain &= !a.reuse_probes;
            let m = info_loss_matrix(&model, &vocab, &train, &dev, &projectors, a.position, a.category, &opts)?;
            let path = run.out(with_suffix(&a.out, ".csv"));
            report::write_info_loss_csv(&path, &m)?;
            run.output(&path)?;
            run.write_json(with_suffix(&a.out, ".json"), &m)?;
        }
        Command::AttnSweep(a) => {
            let (model, vocab) = run.model(&a.model)?;
            let data = run.dataset(&a.data)?;
            let sweeps = a
                .kinds
                .iter()
                .map(|&k| range_sweep(&model, &vocab, &data, k, a.mode))
                .collect::<Result<Vec<_>>>()?;
            let path = run.out(with_suffix(&a.out, ".csv"));
            report::write_range_csv(&path, &sweeps)?;
            run.output(&path)?;
            run.write_json(with_suffix(&a.out, ".json"), &report::range_json(&sweeps))?;
        }
        Command::Distance(a) => {
            let (model, vocab) = run.model(&a.model)?;
            let data = run.dataset(&a.data)?;
            let t = triptych_sweep(&model, &vocab, &data, a.kind, a.mode)?;
            let tables = [
                ("single".to_string(), &t.single),
                ("to_last".to_string(), &t.to_last),
                ("from_first".to_string(), &t.from_first),
            ];
            let path = run.out(with_suffix(&a.out, ".csv"));
            report::write_distance_csv(&path, &tables)?;
            run.output(&path)?;
            run.write_json(with_suffix(&a.out, ".json"), &t)?;
        }
        Command::Report(a) => match a.kind {
            ReportKind::Table2 => {
                let mut sweeps: Vec<SweepRow> = Vec::new();
                for p in &a.sweeps {
                    run.input(p)?;
                    sweeps.extend(read_json::<Vec<SweepRow>>(p)?);
                }
                let info = read_info(run, &a.info_loss)?;
                let info_random = read_info(run, &a.info_loss_random)?;
                let blocks = report::table2(&sweeps, &info, &info_random);
                let path = run.out(with_suffix(&a.out, ".csv"));
                report::write_table2_csv(&path, &blocks)?;
                run.output(&path)?;
                run.write_json(with_suffix(&a.out, ".json"), &blocks)?;
            }
        },
    }
    Ok(())
}

fn read_probes(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<uprobe_core::probes::ProbeParams>> {
    paths
        .iter()
        .map(|p| {
            run.input(p)?;
            read_probe(p)
        })
        .collect()
}

fn read_info(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<InfoLossMatrix>> {
    paths
        .iter()
        .map(|p| {
            run.input(p)?;
            read_json(p)
        })
        .collect()
}

fn write_sweep(run: &mut Run, stem: &str, rows: &[SweepRow]) -> Result<()> {
    let path = run.out(with_suffix(stem, ".csv"));
    report::write_sweep_csv(&path, rows)?;
    run.output(&path)?;
    run.write_json(with_suffix(stem, ".json"), rows)
}

fn start(cli: &Cli) -> Result<Run> {
    let config = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::Input(format!("{} does not exist", p.display())));
            }
            ToolkitConfig::load(p)?
        }
        None => ToolkitConfig::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::Input(format!("{}: {e}", cli.out_dir.display())))?;
    let hashed = serde_json::json!({ "command": &cli.command, "config": &config, "seed": cli.seed });
    let seeds = BTreeMap::from([("seed".to_string(), cli.seed)]);
    let mut manifest = RunManifest::new(cli.command.name(), &hashed, seeds)?;
    if let Some(p) = &cli.config {
        manifest.input(p)?;
    }
    Ok(Run {
        seed: cli.seed,
        config,
        out_dir: cli.out_dir.clone(),
        manifest,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UPROBE_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let started = Instant::now();
    let result = start(&cli).and_then(|mut run| {
        execute(&mut run, &cli.command)?;
        run.manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = run.out(format!("{}.manifest.json", cli.command.name()));
        run.manifest.write(&path)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
