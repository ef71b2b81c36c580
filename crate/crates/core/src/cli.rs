//! The `gad` command line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::bench::run_bench;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiment::{evaluate_scores, sample_normals, Summary};
use crate::graph::{load_graph, save_graph, Graph};
use crate::inject::{inject, InjectionSpec};
use crate::metrics::MetricReport;
use crate::model::{Model, ModelConfig};
use crate::numeric::Matrix;
use crate::scoring::{ContextSplit, ScoreVector};
use crate::synth::{generate, BenchmarkPreset, DomainSpec};
use crate::trainer::{train, train_with, Checkpoint};
use crate::zero_shot::{score_zero_shot, InitStrategy, ZeroShotConfig};

#[derive(Parser, Debug)]
#[command(name = "gad", version, about = "Generalist graph anomaly detection (few-shot and zero-shot)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Inject clique and attribute anomalies into a graph file.
    Inject(InjectArgs),
    /// Train one model on a collection of labeled graphs.
    Train(TrainArgs),
    /// Score every node of a graph with a trained checkpoint.
    Score(ScoreArgs),
    /// AUROC/AUPRC of a scores CSV against a labeled graph.
    Eval(EvalArgs),
    /// Time alignment, encoding and scoring on random graphs of growing edge count.
    Bench(BenchArgs),
    /// Metric-vs-hyperparameter table over seeds.
    Sweep(SweepArgs),
    /// Dump aligned features, embeddings or attention weights as CSV.
    Export(ExportArgs),
    /// Write synthetic labeled graphs.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Injection spec JSON; defaults to cliques of 15 with ~5% anomalies.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Seed for the default spec (ignored with --spec).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labeled training graphs, appended to the config's `datasets`.
    pub datasets: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreMode {
    Fewshot,
    Zeroshot,
}

#[derive(Args, Debug)]
pub struct ZeroShotFlags {
    /// Pseudo-context size (zero-shot).
    #[arg(long)]
    pub n_k: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub kmeans_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum InitArg {
    FeatureKmeans,
    Random,
    MeanDegree,
    EmbeddingKmeans,
}

impl From<InitArg> for InitStrategy {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::FeatureKmeans => InitStrategy::FeatureKmeans,
            InitArg::Random => InitStrategy::Random,
            InitArg::MeanDegree => InitStrategy::MeanDegree,
            InitArg::EmbeddingKmeans => InitStrategy::EmbeddingKmeans,
        }
    }
}

impl ZeroShotFlags {
    fn apply(&self, mut cfg: ZeroShotConfig) -> ZeroShotConfig {
        if let Some(v) = self.n_k {
            cfg.n_k = v;
        }
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.init {
            cfg.init_strategy = v.into();
        }
        if let Some(v) = self.kmeans_seed {
            cfg.kmeans.seed = v;
        }
        cfg
    }
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(value_enum)]
    pub mode: ScoreMode,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Known normal nodes (few-shot only), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub normal_ids: Option<Vec<usize>>,
    /// CSV destination; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Zero-shot trace JSON destination.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub zero_shot: ZeroShotFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Model to time; a freshly initialized default model when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub nodes: usize,
    /// Edge counts, one generated graph each (at least two).
    #[arg(long, value_delimiter = ',', default_value = "10000,40000")]
    pub edges: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub raw_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub n_k: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    #[value(name = "n_k")]
    NK,
    Hops,
    Rounds,
    Hidden,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Labeled evaluation graphs.
    #[arg(long, value_delimiter = ',', required = true)]
    pub graphs: Vec<PathBuf>,
    /// Trained model for n_k and rounds sweeps.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training graphs for hops and hidden sweeps (one model per value and seed).
    #[arg(long, value_delimiter = ',')]
    pub train: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "fewshot")]
    pub mode: ScoreMode,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub aligned: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Attention weights of every query over the context given by --normal-ids.
    #[arg(long)]
    pub attention: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub normal_ids: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Acceptance,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub preset: Option<Preset>,
    /// A single domain spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Nodes per preset domain.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GAD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("GAD_THREADS must be a positive integer, got {raw:?}")))?;
    // A second initialisation in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable");
    s.push('\n');
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Inject(a) => cmd_inject(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Export(a) => cmd_export(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_inject(a: InjectArgs) -> Result<()> {
    let g = load_graph(&a.input)?;
    let spec = match &a.spec {
        Some(p) => read_json(p)?,
        None => InjectionSpec::default_for(g.node_count(), a.seed),
    };
    let out = inject(&g, &spec)?;
    save_graph(&out, &a.output)?;
    write_out(None, &json_line(&out.meta()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.datasets.extend(a.datasets);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    eprintln!("{}", cfg.resolved_json());
    let graphs = cfg.datasets.iter().map(|p| load_graph(p)).collect::<Result<Vec<_>>>()?;
    let mut stdout = io::stdout().lock();
    let ck = train_with(&graphs, &cfg.model, &cfg.train, |r| {
        let _ = stdout.write_all(json_line(r).as_bytes());
    })?;
    stdout.flush()?;
    ck.save(&a.output)
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let g = load_graph(&a.graph)?;
    let scores = match a.mode {
        ScoreMode::Fewshot => {
            let ids = a.normal_ids.filter(|v| !v.is_empty()).ok_or_else(|| {
                Error::Contract("fewshot scoring needs --normal-ids with at least one node".into())
            })?;
            if a.trace.is_some() {
                return Err(Error::Contract("--trace applies to zeroshot scoring only".into()));
            }
            model.score_few_shot(&g, &ids)?
        }
        ScoreMode::Zeroshot => {
            if a.normal_ids.is_some() {
                return Err(Error::Contract("zeroshot scoring takes no --normal-ids".into()));
            }
            let zcfg = a.zero_shot.apply(cfg.zero_shot);
            let (scores, trace) = score_zero_shot(&g, &model, &zcfg)?;
            if let Some(p) = &a.trace {
                fs::write(p, serde_json::to_string_pretty(&trace)?)?;
            }
            scores
        }
    };
    write_out(a.output.as_deref(), &scores.to_csv())
}

#[derive(Serialize)]
struct EvalRow<'a> {
    dataset: &'a str,
    #[serde(flatten)]
    report: MetricReport,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let scores = ScoreVector::from_csv(&fs::read_to_string(&a.scores)?)?;
    let g = load_graph(&a.graph)?;
    let report = evaluate_scores(&g, &scores)?;
    write_out(None, &json_line(&EvalRow { dataset: g.name(), report }))
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.edges.len() < 2 {
        return Err(Error::Config("bench needs at least two edge counts".into()));
    }
    let model = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.model,
        None => Model::init(ModelConfig::default(), a.seed)?,
    };
    let rows = run_bench(&model, a.nodes, &a.edges, a.raw_dim, a.n_k, a.repeats, a.seed)?;
    write_out(None, &json_line(&rows))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: usize,
    pub mode: &'static str,
    pub seeds: Vec<u64>,
    pub runs: usize,
    pub auroc: Summary,
    pub auprc: Summary,
}

#[derive(Serialize)]
struct SweepTable {
    param: SweepParam,
    rows: Vec<SweepRow>,
}

fn sweep_value(
    a: &SweepArgs,
    cfg: &RunConfig,
    graphs: &[Graph],
    train_set: &[Graph],
    base: Option<&Model>,
    value: usize,
) -> Result<SweepRow> {
    let mut reports = Vec::new();
    for &seed in &a.seeds {
        let mut model_cfg = cfg.model;
        let mut zcfg = cfg.zero_shot;
        zcfg.kmeans.seed = seed;
        let mut n_k = cfg.train.n_k;
        match a.param {
            SweepParam::NK => {
                n_k = value;
                zcfg.n_k = value;
            }
            SweepParam::Rounds => zcfg.rounds = value,
            SweepParam::Hops => model_cfg.encoder.hops = value,
            SweepParam::Hidden => model_cfg.encoder.hidden = value,
        }
        let trained;
        let model = match base {
            Some(m) => m,
            None => {
                let tcfg = crate::trainer::TrainConfig { seed, ..cfg.train };
                trained = train(train_set, &model_cfg, &tcfg)?.model;
                &trained
            }
        };
        for g in graphs {
            let scores = match a.mode {
                ScoreMode::Fewshot => model.score_few_shot(g, &sample_normals(g, n_k, seed)?)?,
                ScoreMode::Zeroshot => score_zero_shot(g, model, &zcfg)?.0,
            };
            reports.push(evaluate_scores(g, &scores)?);
        }
    }
    let auroc: Vec<f64> = reports.iter().map(|r| r.auroc).collect();
    let auprc: Vec<f64> = reports.iter().map(|r| r.auprc).collect();
    Ok(SweepRow {
        value,
        mode: match a.mode {
            ScoreMode::Fewshot => "fewshot",
            ScoreMode::Zeroshot => "zeroshot",
        },
        seeds: a.seeds.clone(),
        runs: reports.len(),
        auroc: Summary::of(&auroc).expect("at least one run"),
        auprc: Summary::of(&auprc).expect("at least one run"),
    })
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    if a.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    if a.param == SweepParam::Rounds && a.mode == ScoreMode::Fewshot {
        return Err(Error::Config("rounds only affects zeroshot scoring".into()));
    }
    let graphs = a.graphs.iter().map(|p| load_graph(p)).collect::<Result<Vec<_>>>()?;
    let retrain = matches!(a.param, SweepParam::Hops | SweepParam::Hidden);
    let (base, train_set) = if retrain {
        if a.train.is_empty() {
            return Err(Error::Config("hops and hidden sweeps need --train graphs".into()));
        }
        let t = a.train.iter().map(|p| load_graph(p)).collect::<Result<Vec<_>>>()?;
        (None, t)
    } else {
        let ck = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("n_k and rounds sweeps need --checkpoint".into()))?;
        (Some(Checkpoint::load(ck)?.model), Vec::new())
    };
    let rows = a
        .values
        .par_iter()
        .map(|&v| sweep_value(&a, &cfg, &graphs, &train_set, base.as_ref(), v))
        .collect::<Result<Vec<_>>>()?;
    write_out(None, &json_line(&SweepTable { param: a.param, rows }))
}

fn matrix_csv(ids: &[usize], m: &Matrix, prefix: &str) -> String {
    let mut out = String::from("node_id");
    for j in 0..m.cols() {
        out.push_str(&format!(",{prefix}{j}"));
    }
    out.push('\n');
    for (r, id) in ids.iter().enumerate() {
        out.push_str(&id.to_string());
        for v in m.row(r) {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    if a.aligned.is_none() && a.embeddings.is_none() && a.attention.is_none() {
        return Err(Error::Config("export needs --aligned, --embeddings or --attention".into()));
    }
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let g = load_graph(&a.graph)?;
    let prepared = model.prepare(&g)?;
    let all: Vec<usize> = (0..g.node_count()).collect();
    if let Some(p) = &a.aligned {
        fs::write(p, matrix_csv(&all, &prepared.aligned.matrix, "x"))?;
    }
    if a.embeddings.is_none() && a.attention.is_none() {
        return Ok(());
    }
    let emb = model.embed(&prepared)?;
    if let Some(p) = &a.embeddings {
        fs::write(p, matrix_csv(&all, &emb.h, "h"))?;
    }
    if let Some(p) = &a.attention {
        let ids = a
            .normal_ids
            .clone()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Contract("--attention needs --normal-ids as the context".into()))?;
        let split = ContextSplit::complement(ids, g.node_count())?;
        let (_, att) = model.score_split(&emb, &split)?;
        let mut out = String::from("query_id,context_id,weight\n");
        for (r, q) in split.query.iter().enumerate() {
            for (c, k) in split.context.iter().enumerate() {
                out.push_str(&format!("{q},{k},{:?}\n", att.weights.get(r, c)));
            }
        }
        fs::write(p, out)?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir)?;
    let specs: Vec<DomainSpec> = match (&a.preset, &a.spec) {
        (Some(Preset::Acceptance), _) => {
            let p = BenchmarkPreset::acceptance(a.n);
            p.validate()?;
            p.train.into_iter().chain(p.test).collect()
        }
        (None, Some(path)) => vec![read_json(path)?],
        (None, None) => return Err(Error::Config("synth needs --preset or --spec".into())),
    };
    let mut out = String::new();
    for spec in &specs {
        let g = generate(spec)?;
        save_graph(&g, &a.out_dir.join(format!("{}.gadg", spec.name)))?;
        out.push_str(&json_line(&g.meta()));
    }
    write_out(None, &out)
}
