//! Command-line front end: load model files, run simulation, inference,
//! the brute-force oracle, separation queries, and the verification
//! suites. Every code path is a thin shell over the library.
//!
//! Exit codes: 0 on success, 1 when a verification suite fails, 2 on input
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use qcausal::classical::{classical_do, classical_undo, DoTarget};
use qcausal::graph::{separated, Control, ControlAssignment, NodeId, Ruleset};
use qcausal::inference::{multi_undo, quantum_do, undo_subset};
use qcausal::model::{load_model_with_tol, Model};
use qcausal::network::{counterfactual_oracle, reference_distribution};
use qcausal::table::ClampStats;
use qcausal::verify::{
    chain_network, diamond_network, fcc_violation_demo, impossibility_demo, lemma_suite,
    markov_suite, nft_suite, theorem_case_suite, SuiteResult,
};
use qcausal::{ProbTable, Tolerances};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INPUT_ERROR: i32 = 2;

#[derive(Parser)]
#[command(
    name = "qcausal",
    about = "Simulate quantum causal reference experiments and infer counterfactuals",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the reference distribution of a model.
    Simulate(SimulateArgs),
    /// Run a counterfactual inference rule on the reference distribution.
    Infer(InferArgs),
    /// Simulate a counterfactual experiment directly (the ground truth).
    Oracle(OracleArgs),
    /// Graph-separation verdict for a conditional-independence query.
    Sep(SepArgs),
    /// Run the verification suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file (TOML).
    model: PathBuf,
    /// Output path; .csv selects CSV, anything else the structured text
    /// format. Prints CSV to stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    model: PathBuf,
    /// Intervene on this node (by name).
    #[arg(long, value_name = "NODE", conflicts_with = "undo")]
    r#do: Option<String>,
    /// Pin the intervened node to this outcome index.
    #[arg(long, requires = "do")]
    value: Option<usize>,
    /// Re-draw the intervened node from this comma-separated distribution.
    #[arg(long, requires = "do", conflicts_with = "value")]
    target: Option<String>,
    /// Un-measure these nodes (comma-separated names).
    #[arg(long, value_name = "NODE[,NODE...]")]
    undo: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    model: PathBuf,
    /// Controls, e.g. "undo:Y" or "do:W=3,undo:Z".
    #[arg(long)]
    controls: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Compare the oracle table against a previously written table file
    /// and print the max-norm difference.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args)]
struct SepArgs {
    model: PathBuf,
    /// First node set (comma-separated names).
    #[arg(long)]
    u: String,
    /// Second node set.
    #[arg(long)]
    v: String,
    /// Conditioning set (may be empty or omitted).
    #[arg(long, default_value = "")]
    w: String,
    #[arg(long, value_enum, default_value_t = RulesArg::Quantum)]
    rules: RulesArg,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RulesArg {
    Quantum,
    Classical,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run.
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    suite: SuiteArg,
    /// Base seed for the seeded cases.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the machine-readable results (JSON) here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Lemmas,
    Theorem,
    Markov,
    Impossibility,
    Fcc,
    All,
}

/// Run the CLI on the given argument list (including argv[0]) and return
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success codes.
            let code = if e.use_stderr() { EXIT_INPUT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let tol = tolerances_from_env();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args, tol),
        Command::Infer(args) => cmd_infer(args, tol),
        Command::Oracle(args) => cmd_oracle(args, tol),
        Command::Sep(args) => cmd_sep(args, tol),
        Command::Verify(args) => cmd_verify(args, tol),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT_ERROR
        }
    }
}

/// QCM_TOL overrides the probability-comparison tolerance.
fn tolerances_from_env() -> Tolerances {
    let mut tol = Tolerances::default();
    if let Ok(s) = std::env::var("QCM_TOL") {
        if let Ok(x) = s.trim().parse::<f64>() {
            if x > 0.0 {
                tol.probability = x;
            }
        }
    }
    tol
}

fn node_by_name(model: &Model, name: &str) -> anyhow::Result<NodeId> {
    model
        .dag()
        .nodes()
        .iter()
        .find(|n| n.name == name)
        .map(|n| n.id)
        .ok_or_else(|| anyhow::anyhow!("no node named {name:?} in the model"))
}

fn node_list(model: &Model, csv: &str) -> anyhow::Result<Vec<NodeId>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| node_by_name(model, s))
        .collect()
}

fn emit_table(table: &ProbTable, output: Option<&Path>) -> anyhow::Result<()> {
    match output {
        Some(path) => {
            let text = if path.extension().is_some_and(|e| e == "csv") {
                table.to_csv()
            } else {
                table.to_structured_text()
            };
            std::fs::write(path, text)?;
            println!("wrote {} entries to {}", table.len(), path.display());
        }
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn read_table(path: &Path) -> anyhow::Result<ProbTable> {
    let text = std::fs::read_to_string(path)?;
    let table = if text.starts_with("table v1") {
        ProbTable::from_structured_text(&text)?
    } else {
        ProbTable::from_csv(&text)?
    };
    Ok(table)
}

fn warn_clamp(stats: &ClampStats) {
    if stats.clamped_any() {
        eprintln!(
            "warning: clamped {} negative entr{} (most negative {:.3e}) and renormalized",
            stats.clamped,
            if stats.clamped == 1 { "y" } else { "ies" },
            stats.most_negative
        );
    }
}

fn cmd_simulate(args: SimulateArgs, tol: Tolerances) -> anyhow::Result<i32> {
    let model = load_model_with_tol(&args.model, tol)?;
    let table = match &model {
        Model::Quantum(net) => reference_distribution(net)?,
        Model::Classical(m) => m.joint()?,
    };
    emit_table(&table, args.output.as_deref())?;
    Ok(EXIT_OK)
}

fn parse_target(args: &InferArgs, card: usize) -> anyhow::Result<DoTarget> {
    if let Some(k) = args.value {
        return Ok(DoTarget::Value(k));
    }
    if let Some(spec) = &args.target {
        let dist: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow::anyhow!("bad --target entry: {e}"))?;
        return Ok(DoTarget::Dist(dist));
    }
    // Default: the uniform re-preparation.
    Ok(DoTarget::Dist(vec![1.0 / card as f64; card]))
}

fn cmd_infer(args: InferArgs, tol: Tolerances) -> anyhow::Result<i32> {
    let model = load_model_with_tol(&args.model, tol)?;
    let table = match (&args.r#do, &args.undo) {
        (Some(name), None) => {
            let w = node_by_name(&model, name)?;
            match &model {
                Model::Quantum(net) => {
                    let reference = reference_distribution(net)?;
                    let card = net.dag().dim(w)? * net.dag().dim(w)?;
                    let target = parse_target(&args, card)?;
                    let inferred =
                        quantum_do(&reference, net.dag(), net.layering(), w, &target)?;
                    warn_clamp(&inferred.clamp);
                    inferred.table
                }
                Model::Classical(m) => {
                    let card = m.dag().dim(w)?;
                    let target = parse_target(&args, card)?;
                    classical_do(m, w, &target)?
                }
            }
        }
        (None, Some(spec)) => {
            let nodes = node_list(&model, spec)?;
            if nodes.is_empty() {
                anyhow::bail!("--undo requires at least one node");
            }
            match &model {
                Model::Quantum(net) => {
                    let reference = reference_distribution(net)?;
                    // Group the targets by layer; a single affected layer
                    // uses the subset rule directly.
                    let mut per_layer: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
                    for n in &nodes {
                        let j = net
                            .layering()
                            .layer_of(*n)
                            .ok_or_else(|| anyhow::anyhow!("node {n} missing from layering"))?;
                        per_layer.entry(j).or_default().push(*n);
                    }
                    if per_layer.len() == 1 {
                        let (&j, layer_nodes) = per_layer.iter().next().unwrap();
                        let und =
                            undo_subset(&reference, net.dag(), net.layering(), j, layer_nodes)?;
                        warn_clamp(&und.clamp);
                        und.joint
                    } else {
                        let inferred =
                            multi_undo(&reference, net.dag(), net.layering(), &per_layer)?;
                        warn_clamp(&inferred.clamp);
                        inferred.table
                    }
                }
                Model::Classical(m) => {
                    let mut joint = m.joint()?;
                    for n in nodes {
                        joint = classical_undo(&joint, n)?;
                    }
                    joint
                }
            }
        }
        _ => anyhow::bail!("infer requires exactly one of --do NODE or --undo NODES"),
    };
    emit_table(&table, args.output.as_deref())?;
    Ok(EXIT_OK)
}

/// Controls mini-grammar: comma-separated `do:NODE[=k]` and `undo:NODE`.
fn parse_controls(model: &Model, spec: &str) -> anyhow::Result<ControlAssignment> {
    let mut controls = ControlAssignment::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some(rest) = part.strip_prefix("do:") {
            let (name, value) = match rest.split_once('=') {
                Some((n, v)) => (n, Some(v)),
                None => (rest, None),
            };
            let node = node_by_name(model, name.trim())?;
            let control = match value {
                Some(v) => Control::DoFine(v.trim().parse().map_err(|e| {
                    anyhow::anyhow!("bad outcome in {part:?}: {e}")
                })?),
                None => {
                    let d = model.dag().dim(node)?;
                    Control::Do(vec![1.0 / (d * d) as f64; d * d])
                }
            };
            controls = controls.set(node, control);
        } else if let Some(name) = part.strip_prefix("undo:") {
            let node = node_by_name(model, name.trim())?;
            controls = controls.set(node, Control::Undo);
        } else {
            anyhow::bail!("bad control {part:?}; expected do:NODE[=k] or undo:NODE");
        }
    }
    Ok(controls)
}

fn cmd_oracle(args: OracleArgs, tol: Tolerances) -> anyhow::Result<i32> {
    let model = load_model_with_tol(&args.model, tol)?;
    let Model::Quantum(net) = &model else {
        anyhow::bail!("the oracle requires a quantum model");
    };
    let controls = parse_controls(&model, &args.controls)?;
    let table = counterfactual_oracle(net, &controls)?;
    if let Some(other) = &args.compare {
        let reference = read_table(other)?;
        let diff = table.max_norm_diff(&reference)?;
        println!("max-norm difference: {diff:.3e}");
    }
    emit_table(&table, args.output.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_sep(args: SepArgs, tol: Tolerances) -> anyhow::Result<i32> {
    let _ = tol;
    let model = load_model_with_tol(&args.model, Tolerances::default())?;
    let u = node_list(&model, &args.u)?.into_iter().collect();
    let v = node_list(&model, &args.v)?.into_iter().collect();
    let w = node_list(&model, &args.w)?.into_iter().collect();
    let rules = match args.rules {
        RulesArg::Quantum => Ruleset::Quantum,
        RulesArg::Classical => Ruleset::Classical,
    };
    let verdict = separated(model.dag(), &u, &v, &w, rules)?;
    println!("{}", if verdict { "separated" } else { "not separated" });
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs, _tol: Tolerances) -> anyhow::Result<i32> {
    let base = args.seed;
    let seeds5: Vec<u64> = (0..5).map(|k| base + k).collect();
    let seeds20: Vec<u64> = (0..20).map(|k| base + k).collect();
    let mut suites: Vec<SuiteResult> = Vec::new();

    if matches!(args.suite, SuiteArg::Lemmas | SuiteArg::All) {
        suites.push(lemma_suite(&seeds5)?);
    }
    if matches!(args.suite, SuiteArg::Theorem | SuiteArg::All) {
        suites.push(theorem_case_suite(&seeds5)?);
    }
    if matches!(args.suite, SuiteArg::Markov | SuiteArg::All) {
        suites.push(markov_suite(&chain_network(base)?, Ruleset::Quantum)?);
        suites.push(markov_suite(&diamond_network(base)?, Ruleset::Quantum)?);
        suites.push(nft_suite(&seeds20, 1e-4, 18)?);
    }
    if matches!(args.suite, SuiteArg::Impossibility | SuiteArg::All) {
        suites.push(impossibility_demo()?.to_suite());
    }
    if matches!(args.suite, SuiteArg::Fcc | SuiteArg::All) {
        suites.push(fcc_violation_demo(base.wrapping_add(7))?.to_suite());
    }

    for suite in &suites {
        print!("{}", suite.summary());
    }
    if let Some(path) = &args.output {
        std::fs::write(path, serde_json::to_string_pretty(&suites)?)?;
        println!("wrote machine-readable results to {}", path.display());
    }
    let all_passed = suites.iter().all(|s| s.passed());
    Ok(if all_passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}
