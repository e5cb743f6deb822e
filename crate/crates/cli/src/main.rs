use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use gtq_core::apps::{
    estimate_inputs, optimize_capacity, rate_grid, CapacityDecision, CapacityProblem, CkePredictor, EventLog,
    ModelPredictor, OccupancyPredictor, SimPredictor,
};
use gtq_core::dataset::{self, generate, read_dataset, to_examples, write_dataset};
use gtq_core::evalharness::{moment_sweep, oracle_check, run_experiment, save_report, ExperimentSpec};
use gtq_core::features::featurize;
use gtq_core::mbrnn::{checkpoint, forward, hp_search, train, HpSpace, TrainConfig};
use gtq_core::scenario::{ScenarioConfig, ScenarioSpec};
use gtq_core::simkernel::{simulate_with_service_rate, SimConfig};

#[derive(Parser)]
#[command(name = "gtq", version, about = "Transient occupancy prediction for time-varying single-server queues")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "GTQ_THREADS")]
    threads: Option<usize>,
    /// Accepted for scripts; every code path is already reproducible for a fixed seed.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw scenarios, label them by simulation and write a JSONL dataset.
    GenData(GenData),
    /// Simulate one scenario and write its T x (l+1) distribution as CSV.
    Simulate(SimulateArgs),
    /// Write the feature matrix of one scenario as CSV.
    Featurize(FeaturizeArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Random search over the hyperparameter grid.
    HpSearch(HpSearchArgs),
    /// Predict the occupancy distribution of one scenario.
    Infer(InferArgs),
    /// Run one of the numbered evaluation experiments.
    Evaluate(EvaluateArgs),
    /// Validation SAE against the number of moment features.
    MomentSweep(SweepArgs),
    /// Cheapest service rate meeting the tail constraint.
    OptimizeCapacity(CapacityArgs),
    /// Moment and initial-state estimates from an event log.
    EstimateInputs(EstimateArgs),
    /// Simulator against the exact Markovian solution.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    n: usize,
    #[arg(long = "T", default_value_t = 60)]
    horizon: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 0.5)]
    rho_min: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_max: f64,
    /// Cache features with this many arrival and service moments.
    #[arg(long, num_args = 2, value_names = ["N_ARRIVAL", "N_SERVICE"])]
    features: Option<Vec<usize>>,
    /// Also write all label matrices as raw little-endian f32 next to the dataset.
    #[arg(long)]
    binary_labels: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, default_value_t = 1.0)]
    service_rate: f64,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 4)]
    n_arrival: usize,
    #[arg(long, default_value_t = 4)]
    n_service: usize,
}

#[derive(Args)]
struct TrainOverrides {
    /// JSON training configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    n_arrival: Option<usize>,
    #[arg(long)]
    n_service: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct HpSearchArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value_t = 20)]
    budget: usize,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Experiment number, 1 to 6.
    #[arg(long)]
    experiment: u8,
    #[arg(long = "T", default_value_t = 60)]
    horizon: usize,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value_t = 6)]
    n_max: usize,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct CapacityArgs {
    /// JSON capacity problem; defaults apply to missing fields.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Use a trained model as predictor.
    #[arg(long, conflicts_with = "oracle")]
    model: Option<PathBuf>,
    /// Use `cke` (Markovian only) or `sim` as predictor.
    #[arg(long, value_parser = ["cke", "sim"])]
    oracle: Option<String>,
    /// Replace the grid with this many evenly spaced rates over [0.1, 10].
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 4)]
    n_moments: usize,
    #[arg(long, default_value_t = 50)]
    l: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
}

#[derive(Debug)]
struct UsageError(&'static str);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

impl std::error::Error for UsageError {}

struct Ctx {
    seed: Option<u64>,
    out: Option<PathBuf>,
    json: bool,
}

impl Ctx {
    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| UsageError("--seed is required for this subcommand").into())
    }

    /// `--out`, else `$GTQ_OUT_DIR/<default_name>`, else none.
    fn out_path(&self, default_name: &str) -> Option<PathBuf> {
        self.out
            .clone()
            .or_else(|| std::env::var_os("GTQ_OUT_DIR").map(|d| PathBuf::from(d).join(default_name)))
    }

    fn require_out(&self, default_name: &str) -> Result<PathBuf> {
        self.out_path(default_name).ok_or_else(|| UsageError("--out (or GTQ_OUT_DIR) is required for this subcommand").into())
    }

    fn report(&self, summary: Value, text: &str) -> Result<()> {
        if self.json {
            println!("{}", serde_json::to_string(&summary)?);
        } else if !text.is_empty() {
            eprintln!("{text}");
        }
        Ok(())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(io::BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Rows as CSV to `path`, or to stdout when no path is set.
fn write_rows(path: Option<&Path>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => {
            ensure_parent(p)?;
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn prob_header(width: usize) -> Vec<String> {
    (0..width).map(|k| format!("p{k}")).collect()
}

fn train_config(o: &TrainOverrides, seed: u64) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &o.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    c.seed = seed;
    macro_rules! apply {
        ($($f:ident),*) => { $(if let Some(v) = o.$f { c.$f = v; })* };
    }
    apply!(epochs, layers, hidden, batch, lr0, weight_decay, n_arrival, n_service);
    c.validate()?;
    Ok(c)
}

fn gen_data(ctx: &Ctx, a: &GenData) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.require_out("dataset.jsonl")?;
    let cfg = ScenarioConfig { horizon: a.horizon, rho_bar_range: (a.rho_min, a.rho_max), ..Default::default() };
    cfg.validate()?;
    let moments = a.features.as_ref().map(|v| (v[0], v[1]));
    let records = generate(a.n, &cfg, a.reps, seed, moments)?;
    ensure_parent(&out)?;
    let (na, ns) = moments.unwrap_or((4, 4));
    write_dataset(&records, &out, na, ns)?;
    let mut summary = json!({"command": "gen-data", "records": records.len(), "path": out, "manifest": dataset::manifest_path(&out)});
    if a.binary_labels {
        let bin = out.with_extension("labels.bin");
        let mut w = BufWriter::new(File::create(&bin)?);
        for r in &records {
            r.labels.write_binary(&mut w)?;
        }
        w.flush()?;
        summary["binary_labels"] = json!(bin);
    }
    ctx.report(summary, &format!("wrote {} records to {}", records.len(), out.display()))
}

fn simulate_cmd(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let s: ScenarioSpec = read_json(&a.scenario)?;
    let cfg = SimConfig { num_reps: a.reps, seed: ctx.seed()?, l: s.truncation() };
    let labels = simulate_with_service_rate(&s, &cfg, a.service_rate)?;
    let out = ctx.out_path("simulation.csv");
    emit_matrix(ctx, "simulate", out.as_deref(), &prob_header(labels.width()), labels.rows())
}

fn emit_matrix(ctx: &Ctx, cmd: &str, out: Option<&Path>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    if ctx.json && out.is_none() {
        return ctx.report(json!({"command": cmd, "header": header, "rows": rows}), "");
    }
    write_rows(out, header, rows)?;
    ctx.report(json!({"command": cmd, "periods": rows.len(), "path": out}), "")
}

fn featurize_cmd(ctx: &Ctx, a: &FeaturizeArgs) -> Result<()> {
    let s: ScenarioSpec = read_json(&a.scenario)?;
    let x = featurize(&s, a.n_arrival, a.n_service)?;
    let header: Vec<String> = (0..x.width()).map(|j| format!("x{j}")).collect();
    let out = ctx.out_path("features.csv");
    emit_matrix(ctx, "featurize", out.as_deref(), &header, x.rows())
}

fn load_split(train: &Path, val: &Path, c: &TrainConfig) -> Result<(Vec<gtq_core::mbrnn::Example>, Vec<gtq_core::mbrnn::Example>)> {
    let (_, tr) = read_dataset(train)?;
    let (_, va) = read_dataset(val)?;
    Ok((to_examples(&tr, c.n_arrival, c.n_service)?, to_examples(&va, c.n_arrival, c.n_service)?))
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = train_config(&a.overrides, ctx.seed.unwrap_or(0))?;
    let out = ctx.require_out("model.ckpt")?;
    let (tr, va) = load_split(&a.train, &a.val, &cfg)?;
    let outcome = train(&tr, &va, &cfg)?;
    ensure_parent(&out)?;
    checkpoint::save(&outcome.params, &out)?;
    let hist = out.with_extension("history.json");
    write_json(&hist, &json!({"config": cfg, "history": outcome.history}))?;
    ctx.report(
        json!({"command": "train", "checkpoint": out, "history": hist, "best_val_sae": outcome.history.best_val_sae,
               "initial_val_sae": outcome.history.initial_val_sae, "best_epoch": outcome.history.best_epoch}),
        &format!("best validation SAE {:.5} (untrained {:.5})", outcome.history.best_val_sae, outcome.history.initial_val_sae),
    )
}

fn hp_search_cmd(ctx: &Ctx, a: &HpSearchArgs) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let base = train_config(&a.overrides, seed)?;
    let (tr, va) = load_split(&a.train, &a.val, &base)?;
    let res = hp_search(&HpSpace::default(), a.budget, seed, &tr, &va, &base)?;
    if let Some(out) = ctx.out_path("hp_search.json") {
        write_json(&out, &res)?;
    }
    ctx.report(
        json!({"command": "hp-search", "best": res.best, "best_val_sae": res.best_val_sae, "trials": res.trials.len()}),
        &format!("best validation SAE {:.5} over {} trials", res.best_val_sae, res.trials.len()),
    )
}

fn load_model(path: &Path) -> Result<gtq_core::mbrnn::ModelParams<f32>> {
    if !path.exists() {
        bail!("model checkpoint {} not found", path.display());
    }
    Ok(checkpoint::load(path)?)
}

fn infer_cmd(ctx: &Ctx, a: &InferArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let s: ScenarioSpec = read_json(&a.scenario)?;
    let x = featurize(&s, model.arch.n_arrival, model.arch.n_service)?;
    let p = forward(&model, x.rows())?;
    let out = ctx.out_path("prediction.csv");
    emit_matrix(ctx, "infer", out.as_deref(), &prob_header(model.arch.output), &p)
}

fn evaluate_cmd(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut spec = ExperimentSpec::numbered(a.experiment, a.horizon, ctx.seed.unwrap_or(0))?;
    if let Some(n) = a.size {
        spec.size = n;
    }
    if let Some(r) = a.reps {
        spec.num_reps = r;
    }
    let report = run_experiment(&spec, &model)?;
    let dir = ctx.require_out(&spec.name)?;
    save_report(&report, &dir)?;
    let m = &report.metrics.all;
    let pare: Vec<Value> = m.pare.iter().map(|(q, s)| json!({"q": q, "overall": s.overall})).collect();
    ctx.report(
        json!({"command": "evaluate", "experiment": a.experiment, "dir": dir, "sae": m.sae.overall, "rem": m.rem.overall,
               "pare": pare, "fluid_rem": report.fluid.as_ref().map(|f| f.rem.overall), "bands": report.bands}),
        &format!("SAE {:.5}  REM {:.3}%  -> {}", m.sae.overall, m.rem.overall, dir.display()),
    )
}

fn sweep_cmd(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let cfg = train_config(&a.overrides, ctx.seed.unwrap_or(0))?;
    let (_, tr) = read_dataset(&a.train)?;
    let (_, va) = read_dataset(&a.val)?;
    let pts = moment_sweep(a.n_max, &tr, &va, &cfg)?;
    if let Some(out) = ctx.out_path("moment_sweep.json") {
        write_json(&out, &pts)?;
    }
    let text: Vec<String> = pts.iter().map(|p| format!("n={} val SAE {:.5}", p.n, p.val_sae)).collect();
    ctx.report(json!({"command": "moment-sweep", "points": pts}), &text.join("\n"))
}

fn capacity_cmd(ctx: &Ctx, a: &CapacityArgs) -> Result<()> {
    let mut problem: CapacityProblem = match &a.problem {
        Some(p) => read_json(p)?,
        None => CapacityProblem::default(),
    };
    if let Some(n) = a.grid {
        problem.grid = rate_grid(n);
    }
    let model;
    let predictor: Box<dyn OccupancyPredictor> = match (&a.model, a.oracle.as_deref()) {
        (Some(path), _) => {
            model = load_model(path)?;
            Box::new(ModelPredictor { model: &model })
        }
        (None, Some("cke")) => Box::new(CkePredictor::default()),
        (None, Some(_)) => Box::new(SimPredictor { num_reps: a.reps, seed: ctx.seed.unwrap_or(0) }),
        (None, None) => bail!("pass --model or --oracle"),
    };
    let outcome = optimize_capacity(&problem, predictor.as_ref())?;
    if let Some(out) = ctx.out_path("capacity.json") {
        write_json(&out, &outcome)?;
    }
    let text = match &outcome.decision {
        CapacityDecision::Feasible { rate, cost } => format!("optimal rate {rate:.4} at cost {cost:.3}"),
        CapacityDecision::Infeasible { rate, max_tail } => {
            format!("no feasible rate; least violation {max_tail:.3e} at rate {rate:.4}")
        }
    };
    ctx.report(json!({"command": "optimize-capacity", "decision": outcome.decision, "unconstrained": outcome.unconstrained}), &text)
}

fn estimate_cmd(ctx: &Ctx, a: &EstimateArgs) -> Result<()> {
    let f = File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let log = EventLog::from_csv(f)?;
    let est = estimate_inputs(&log, a.n_moments, a.l)?;
    if let Some(out) = ctx.out_path("estimates.json") {
        write_json(&out, &est)?;
    }
    ctx.report(
        json!({"command": "estimate-inputs", "estimates": est}),
        &format!("arrival moments {:?}\nservice moments {:?}", &est.arrival[..], &est.service[..]),
    )
}

fn oracle_cmd(ctx: &Ctx, a: &OracleArgs) -> Result<bool> {
    let cases = oracle_check(ctx.seed.unwrap_or(0), a.reps, a.tolerance)?;
    let pass = cases.iter().all(|c| c.pass);
    let text: Vec<String> = cases
        .iter()
        .map(|c| format!("{}: {} max SAE {:.5} (tolerance {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.max_sae, c.tolerance))
        .collect();
    ctx.report(json!({"command": "oracle-check", "pass": pass, "cases": cases}), &text.join("\n"))?;
    Ok(pass)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Ctx { seed: cli.seed, out: cli.out, json: cli.json };
    match &cli.cmd {
        Cmd::GenData(a) => gen_data(&ctx, a)?,
        Cmd::Simulate(a) => simulate_cmd(&ctx, a)?,
        Cmd::Featurize(a) => featurize_cmd(&ctx, a)?,
        Cmd::Train(a) => train_cmd(&ctx, a)?,
        Cmd::HpSearch(a) => hp_search_cmd(&ctx, a)?,
        Cmd::Infer(a) => infer_cmd(&ctx, a)?,
        Cmd::Evaluate(a) => evaluate_cmd(&ctx, a)?,
        Cmd::MomentSweep(a) => sweep_cmd(&ctx, a)?,
        Cmd::OptimizeCapacity(a) => capacity_cmd(&ctx, a)?,
        Cmd::EstimateInputs(a) => estimate_cmd(&ctx, a)?,
        Cmd::OracleCheck(a) => return oracle_cmd(&ctx, a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}
