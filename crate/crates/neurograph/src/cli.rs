//! The `neurograph` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurograph_core::arch::{count_params, forward, ArchSpec, ParamStore};
use neurograph_core::automorphism::{apply_automorphism_to_graph, check_sharing, enumerate_automorphisms, NeuralAutomorphism};
use neurograph_core::compute_graph::{build_computation_graph, CompGraph};
use neurograph_core::exec::Executor;
use neurograph_core::gnn::{build_forward_sim_gnn, simulate_forward, GnnModel};
use neurograph_core::param_graph::{build_param_graph, EdgeType};
use neurograph_core::rng::{normal, stream};
use neurograph_core::tasks::{ArchPool, GraphView, TaskKind};
use neurograph_core::train::{evaluate, trace_csv, train, EditModel, EvalMetrics, LossKind};
use neurograph_core::Tensor;
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::{Checkpoint, TrainedModel};
use crate::config::{ModelOverrides, Overrides, RunConfig, TrainOverrides};
use crate::dataset::{generate, read_dataset, write_dataset, GenOptions};
use crate::error::{exit, Error, Result};
use crate::export::{CompGraphDoc, ParamGraphDoc};
use crate::network::{read_network, read_text, write_text, NetworkDoc};
use crate::parallel::RayonExecutor;

/// Deviation above which verification commands exit with status 1.
pub const VERIFY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "neurograph", version, about = "Graph metanetworks over neural network parameters")]
#[command(after_help = "Exit codes: 0 success, 1 verification failure, 2 input error, 3 unsupported feature, 4 internal invariant violation.\n\
                        NEUROGRAPH_THREADS caps the worker threads used for data generation, training and evaluation.")]
pub struct Cli {
    /// Print one machine-readable JSON object on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Build the parameter or computation graph of a network and export it.
    BuildGraph(BuildGraphArgs),
    /// Enumerate neural DAG automorphisms and check that each preserves the function.
    VerifySymmetry(VerifySymmetryArgs),
    /// Run the constructed forward-simulation metanet and compare with the network.
    SimulateForward(SimulateArgs),
    /// Generate a dataset of networks.
    GenData(GenDataArgs),
    /// Train a metanet on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Param,
    Computation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Json,
    Dot,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildGraphArgs {
    /// Network document (JSON: layers, input_shape, optional params).
    pub net: PathBuf,
    #[arg(long, value_enum, default_value = "param")]
    pub kind: GraphKind,
    /// Where to write the export; omitted means counts only.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ExportFormat,
    /// Seed for parameters missing from the document.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifySymmetryArgs {
    /// Network document, or a computation graph exported by build-graph.
    pub net: PathBuf,
    /// Random inputs per automorphism.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Stop after this many automorphisms.
    #[arg(long, default_value_t = 5040)]
    pub max_autos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    pub net: PathBuf,
    /// One input (flat JSON array) or several (array of arrays).
    pub x: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    Inr,
    Acc,
    Edit,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Inr => TaskKind::Inr,
            TaskArg::Acc => TaskKind::Acc,
            TaskArg::Edit => TaskKind::Edit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolArg {
    Default,
    /// Widths never seen by the default pool.
    HeldOut,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// INR layer widths, e.g. 1,16,1.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Architecture pool for the accuracy task.
    #[arg(long, value_enum, default_value = "default")]
    pub pool: PoolArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewArg {
    Param,
    ParamUndirected,
    Computation,
}

impl From<ViewArg> for GraphView {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Param => GraphView::Param,
            ViewArg::ParamUndirected => GraphView::ParamUndirected,
            ViewArg::Computation => GraphView::Computation,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Expected task; must match the dataset.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metric trace CSV; defaults to the checkpoint path with a .trace.csv extension.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, value_enum)]
    pub view: Option<ViewArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsFormat {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Metrics format in text mode; --json always prints JSON.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: MetricsFormat,
}

/// Result of one command: a JSON object plus its human-readable form.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub json: Value,
    pub text: String,
    pub exit_code: i32,
}

impl Report {
    fn ok(json: Value, text: String) -> Self {
        Self {
            json,
            text,
            exit_code: exit::OK,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return if code == 0 { exit::OK } else { exit::INPUT };
        }
    };
    match execute(&cli.command) {
        Ok(mut report) => {
            if report.json.get("config").is_none() {
                let echo = serde_json::to_value(&cli.command).expect("arguments always serialize");
                if !cli.json {
                    let _ = writeln!(err, "config: {echo}");
                }
                report.json["config"] = echo;
            }
            if cli.json {
                let _ = writeln!(out, "{}", report.json);
            } else {
                let _ = write!(out, "{}", report.text);
            }
            report.exit_code
        }
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(err, "error: {e}");
            if cli.json {
                let _ = writeln!(out, "{}", json!({ "error": e.to_string(), "exit_code": code }));
            }
            code
        }
    }
}

pub fn execute(cmd: &Command) -> Result<Report> {
    match cmd {
        Command::BuildGraph(a) => cmd_build_graph(a),
        Command::VerifySymmetry(a) => cmd_verify_symmetry(a),
        Command::SimulateForward(a) => cmd_simulate_forward(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn load_network(path: &Path, seed: u64) -> Result<(ArchSpec, ParamStore)> {
    read_network(path)?.resolve(seed)
}

pub fn cmd_build_graph(a: &BuildGraphArgs) -> Result<Report> {
    let (spec, params) = load_network(&a.net, a.seed)?;
    let parameters = count_params(&spec);
    let (json, text, export) = match a.kind {
        GraphKind::Computation => {
            let g = build_computation_graph(&spec, &params)?;
            let bound = g.edges.iter().filter(|e| e.param.is_some()).count();
            let classes = g.num_share_classes();
            let json = json!({
                "kind": "computation",
                "nodes": g.nodes.len(),
                "edges": g.edges.len(),
                "parameter_edges": bound,
                "parameters": parameters,
                "share_classes": classes,
            });
            let text = format!(
                "computation graph: {} nodes, {} edges, {} parameters, {} share classes\n",
                g.nodes.len(),
                g.edges.len(),
                parameters,
                classes
            );
            let export = match a.format {
                ExportFormat::Json => to_json_text(&CompGraphDoc::from_graph(&g)),
                ExportFormat::Dot => g.to_dot(),
            };
            (json, text, export)
        }
        GraphKind::Param => {
            let g = build_param_graph(&spec, &params)?;
            let count = |t: EdgeType| g.edges.iter().filter(|e| e.feature.edge_type == t).count();
            let (weights, biases) = (count(EdgeType::Weight), count(EdgeType::Bias));
            let bound = g.num_param_edges();
            if bound != parameters {
                return Err(Error::Invariant(format!("{bound} parameter-bound edges for {parameters} parameters")));
            }
            let json = json!({
                "kind": "param",
                "nodes": g.nodes.len(),
                "edges": g.edges.len(),
                "weight_edges": weights,
                "bias_edges": biases,
                "parameter_edges": bound,
                "parameters": parameters,
            });
            let text = format!(
                "parameter graph: {} nodes, {} edges ({} weight edges, {} bias edges), {} parameters\n",
                g.nodes.len(),
                g.edges.len(),
                weights,
                biases,
                parameters
            );
            let export = match a.format {
                ExportFormat::Json => to_json_text(&ParamGraphDoc::from_graph(&g)),
                ExportFormat::Dot => g.to_dot()?,
            };
            (json, text, export)
        }
    };
    let mut json = json;
    let mut text = text;
    if let Some(out) = &a.out {
        write_text(out, &export)?;
        json["out"] = json!(out.display().to_string());
        text.push_str(&format!("wrote {}\n", out.display()));
    }
    Ok(Report::ok(json, text))
}

fn to_json_text<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("exports always serialize");
    s.push('\n');
    s
}

/// Accepts a network document or an exported computation graph.
fn load_comp_graph(path: &Path, seed: u64) -> Result<CompGraph> {
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if value.get("edges").is_some() {
        let doc: CompGraphDoc = serde_json::from_value(value).map_err(|e| Error::json(path, e))?;
        return doc.to_graph();
    }
    let (spec, params) = NetworkDoc::from_json(&text, path)?.resolve(seed)?;
    Ok(build_computation_graph(&spec, &params)?)
}

fn graph_deviation(g: &CompGraph, h: &CompGraph, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..g.d_in).map(|_| normal(&mut rng)).collect();
        let (ya, yb) = (g.eval(&x)?, h.eval(&x)?);
        for (p, q) in ya.iter().zip(&yb) {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(worst)
}

/// Greedy generating set: keep an automorphism when it is not yet in the
/// group generated by the ones kept so far.
pub fn generating_set(autos: &[NeuralAutomorphism]) -> Vec<NeuralAutomorphism> {
    let Some(first) = autos.first() else {
        return Vec::new();
    };
    let identity = NeuralAutomorphism::identity(first.node_perm.len(), first.edge_perm.len());
    let mut group: BTreeSet<Vec<usize>> = BTreeSet::from([identity.node_perm.clone()]);
    let mut gens: Vec<NeuralAutomorphism> = Vec::new();
    for a in autos {
        if group.contains(&a.node_perm) {
            continue;
        }
        gens.push(a.clone());
        let mut frontier = vec![identity.clone()];
        group = BTreeSet::from([identity.node_perm.clone()]);
        while let Some(x) = frontier.pop() {
            for g in &gens {
                let y = g.compose(&x);
                if group.insert(y.node_perm.clone()) {
                    frontier.push(y);
                }
            }
        }
    }
    gens
}

pub fn cmd_verify_symmetry(a: &VerifySymmetryArgs) -> Result<Report> {
    let g = load_comp_graph(&a.net, a.seed)?;
    check_sharing(&g)?;
    let autos = enumerate_automorphisms(&g, a.max_autos)?;
    let mut worst: f64 = 0.0;
    for (k, auto) in autos.iter().enumerate() {
        let h = apply_automorphism_to_graph(&g, auto)?;
        worst = worst.max(graph_deviation(&g, &h, a.samples, a.seed.wrapping_add(k as u64))?);
    }
    let gens = generating_set(&autos);
    let complete = autos.len() < a.max_autos;
    let json = json!({
        "group_order": autos.len(),
        "complete": complete,
        "generators": gens.iter().map(|g| g.node_perm.clone()).collect::<Vec<_>>(),
        "max_deviation": worst,
    });
    let mut text = format!(
        "group order: {}{}\ngenerators: {}\nmax deviation: {:e}\n",
        autos.len(),
        if complete { "" } else { " (search stopped at --max-autos)" },
        gens.len(),
        worst
    );
    let mut report = Report::ok(json, String::new());
    if worst > VERIFY_TOLERANCE {
        text.push_str("FAILED: an automorphism changed the network function\n");
        report.exit_code = exit::VERIFICATION;
    }
    report.text = text;
    Ok(report)
}

fn parse_inputs(path: &Path) -> Result<Vec<Vec<f64>>> {
    let value: Value = serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(path, e))?;
    let bad = || Error::Input(format!("{}: expected an array of numbers or an array of such arrays", path.display()));
    let row = |v: &Value| -> Result<Vec<f64>> { v.as_array().ok_or_else(bad)?.iter().map(|x| x.as_f64().ok_or_else(bad)).collect() };
    let arr = value.as_array().ok_or_else(bad)?;
    if arr.first().is_some_and(Value::is_array) {
        arr.iter().map(row).collect()
    } else {
        Ok(vec![row(&value)?])
    }
}

pub fn cmd_simulate_forward(a: &SimulateArgs) -> Result<Report> {
    let (spec, params) = load_network(&a.net, a.seed)?;
    let g = build_computation_graph(&spec, &params)?;
    let model = build_forward_sim_gnn(&g)?;
    let inputs = parse_inputs(&a.x)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    let mut worst: f64 = 0.0;
    for x in inputs {
        if x.len() != g.d_in {
            return Err(Error::Input(format!("input has {} values, network expects {}", x.len(), g.d_in)));
        }
        let reference = forward(&spec, &params, &Tensor::new(spec.input_shape.clone(), x.clone()).map_err(|e| Error::Input(e.to_string()))?)?;
        let simulated = simulate_forward(&model, &g, &x)?;
        let dev = reference.data().iter().zip(&simulated).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        text.push_str(&format!("reference {:?}\nsimulated {:?}\ndeviation {:e}\n", reference.data(), simulated, dev));
        rows.push(json!({ "input": x, "reference": reference.data(), "simulated": simulated, "max_deviation": dev }));
    }
    text.push_str(&format!("max deviation: {worst:e}\n"));
    let mut report = Report::ok(json!({ "outputs": rows, "max_deviation": worst }), text);
    if worst > VERIFY_TOLERANCE {
        report.text.push_str("FAILED: simulation does not match the network\n");
        report.exit_code = exit::VERIFICATION;
    }
    Ok(report)
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<Report> {
    let exec = RayonExecutor::from_env()?;
    let task = TaskKind::from(a.task);
    let opts = GenOptions {
        widths: a.widths.clone(),
        pool: (task == TaskKind::Acc).then(|| match a.pool {
            PoolArg::Default => ArchPool::default(),
            PoolArg::HeldOut => ArchPool::held_out_widths(),
        }),
    };
    let stored = generate(task, a.n, a.seed, &opts, &exec)?;
    write_dataset(&a.out, &stored)?;
    let ds = &stored.dataset;
    let failed = ds.items.iter().filter(|it| it.fit_failed).count();
    let json = json!({
        "task": task.name(),
        "n": ds.items.len(),
        "seed": a.seed,
        "fit_failed": failed,
        "split": { "train": ds.split.train.len(), "val": ds.split.val.len(), "test": ds.split.test.len() },
        "generator": stored.generator,
        "out": a.out.display().to_string(),
    });
    let text = format!(
        "generated {} {} networks (seed {}, {} failed fits) in {}\nsplit: {} train, {} val, {} test\n",
        ds.items.len(),
        task.name(),
        a.seed,
        failed,
        a.out.display(),
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len()
    );
    Ok(Report::ok(json, text))
}

fn flag_overrides(a: &TrainArgs) -> Overrides {
    Overrides {
        seed: a.seed,
        train: TrainOverrides {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            ..Default::default()
        },
        model: ModelOverrides {
            hidden: a.hidden,
            layers: a.layers,
            view: a.view.map(GraphView::from),
            ..Default::default()
        },
    }
}

fn metrics_json(m: &EvalMetrics) -> Value {
    json!({ "count": m.count, "mse": finite_or_null(m.loss), "r2": finite_or_null(m.r2), "tau": finite_or_null(m.tau) })
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<Report> {
    let stored = read_dataset(&a.data)?;
    let ds = &stored.dataset;
    if let Some(t) = a.task {
        if TaskKind::from(t) != ds.task {
            return Err(Error::Input(format!("--task {} but the dataset holds {} networks", TaskKind::from(t).name(), ds.task.name())));
        }
    }
    let file = match &a.config {
        Some(p) => Overrides::from_toml(&read_text(p)?)?,
        None => Overrides::default(),
    };
    let cfg = RunConfig::resolve(ds.task, &[&file, &flag_overrides(a)])?;
    let exec = RayonExecutor::from_env()?;
    let view = cfg.model.view;
    let (checkpoint, trace, test) = match ds.task {
        TaskKind::Inr | TaskKind::Acc => {
            let tr = ds.graph_items(&ds.split.train, view)?;
            let va = ds.graph_items(&ds.split.val, view)?;
            let out_dim = tr.first().map(|(_, t)| t.len()).ok_or(Error::Input("training split has no usable items".into()))?;
            let gcfg = cfg.gnn_config(out_dim);
            let (model, trace) = train(GnnModel::random(&gcfg, cfg.seed), &tr, &va, &cfg.train, &exec)?;
            let te = ds.graph_items(&ds.split.test, view)?;
            let test = evaluate(&model, &te, cfg.train.loss, &exec)?;
            (Checkpoint::gmn(ds.task, view, gcfg, model), trace, test)
        }
        TaskKind::Edit => {
            let grid = stored.generator.edit.as_ref().ok_or(Error::Input("edit dataset has no grid in its manifest".into()))?.grid.clone();
            let tr = ds.edit_items(&ds.split.train, &grid, view)?;
            let va = ds.edit_items(&ds.split.val, &grid, view)?;
            let template = tr.first().map(|(it, _)| it.spec.clone()).ok_or(Error::Input("training split has no usable items".into()))?;
            let gcfg = cfg.gnn_config(1);
            let model = EditModel::new(GnnModel::random(&gcfg, cfg.seed), &template, cfg.model.gamma_mode)?;
            let (model, trace) = train(model, &tr, &va, &cfg.train, &exec)?;
            let te = ds.edit_items(&ds.split.test, &grid, view)?;
            let test = evaluate(&model, &te, cfg.train.loss, &exec)?;
            (Checkpoint::edit(view, gcfg, template, model), trace, test)
        }
    };
    checkpoint.save(&a.out)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| a.out.with_extension("trace.csv"));
    write_text(&trace_path, &trace_csv(&trace))?;
    let last = trace.last().expect("at least one epoch");
    let json = json!({
        "config": cfg,
        "epochs": trace.len(),
        "final": {
            "train_loss": last.train_loss,
            "val_loss": finite_or_null(last.val_loss),
            "val_r2": finite_or_null(last.val_r2),
            "val_tau": finite_or_null(last.val_tau),
        },
        "test": metrics_json(&test),
        "checkpoint": a.out.display().to_string(),
        "trace": trace_path.display().to_string(),
    });
    let text = format!(
        "resolved config:\n{}\ntrained {} epochs: train loss {:.6}, val loss {:.6}\ntest: mse {:.6}, r2 {:.4}, tau {:.4} ({} items)\nwrote {} and {}\n",
        cfg.to_toml(),
        trace.len(),
        last.train_loss,
        last.val_loss,
        test.loss,
        test.r2,
        test.tau,
        test.count,
        a.out.display(),
        trace_path.display()
    );
    Ok(Report::ok(json, text))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Report> {
    let stored = read_dataset(&a.data)?;
    let ck = Checkpoint::load(&a.model)?;
    let ds = &stored.dataset;
    if ck.header.task != ds.task {
        return Err(Error::Input(format!("checkpoint is for {} but the dataset holds {} networks", ck.header.task.name(), ds.task.name())));
    }
    let all: Vec<usize>;
    let (split_name, indices) = match a.split {
        SplitArg::Train => ("train", &ds.split.train),
        SplitArg::Val => ("val", &ds.split.val),
        SplitArg::Test => ("test", &ds.split.test),
        SplitArg::All => {
            all = (0..ds.items.len()).collect();
            ("all", &all)
        }
    };
    let exec = RayonExecutor::from_env()?;
    let view = ck.header.view;
    let metrics = eval_model(&ck.model, ds, indices, view, stored.generator.edit.as_ref().map(|e| e.grid.as_slice()), &exec)?;
    if metrics.count == 0 {
        return Err(Error::Input(format!("the {split_name} split has no usable items")));
    }
    let mut json = metrics_json(&metrics);
    json["task"] = json!(ds.task.name());
    json["split"] = json!(split_name);
    let cell = |x: f64| if x.is_finite() { x.to_string() } else { String::new() };
    let text = match a.format {
        MetricsFormat::Json => format!("{json}\n"),
        MetricsFormat::Csv => format!(
            "task,split,count,mse,r2,tau\n{},{},{},{},{},{}\n",
            ds.task.name(),
            split_name,
            metrics.count,
            cell(metrics.loss),
            cell(metrics.r2),
            cell(metrics.tau)
        ),
    };
    Ok(Report::ok(json, text))
}

fn eval_model<E: Executor>(
    model: &TrainedModel,
    ds: &neurograph_core::tasks::NetworkDataset,
    indices: &[usize],
    view: GraphView,
    grid: Option<&[f64]>,
    exec: &E,
) -> Result<EvalMetrics> {
    Ok(match model {
        TrainedModel::Gmn(m) => evaluate(m, &ds.graph_items(indices, view)?, LossKind::Mse, exec)?,
        TrainedModel::Edit(m) => {
            let grid = grid.ok_or(Error::Input("edit dataset has no grid in its manifest".into()))?;
            evaluate(m, &ds.edit_items(indices, grid, view)?, LossKind::Mse, exec)?
        }
    })
}

#[cfg(test)]
mod tests {
    use neurograph_core::arch::Activation;
    use neurograph_core::automorphism::mlp_hidden_automorphisms;

    use super::*;

    #[test]
    fn generating_set_of_s3_has_two_elements() {
        let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
        let g = build_computation_graph(&spec, &neurograph_core::arch::init_params(&spec, 0)).unwrap();
        let autos = enumerate_automorphisms(&g, 100).unwrap();
        assert_eq!(autos.len(), 6);
        let gens = generating_set(&autos);
        assert_eq!(gens.len(), 2);
        assert_eq!(generating_set(&mlp_hidden_automorphisms(&spec).unwrap()).len(), 2);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
