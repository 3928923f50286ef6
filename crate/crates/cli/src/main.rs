use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use causalsim::adversary::{scenario_e12, scenario_eimp, AdversaryError};
use causalsim::checkers::{
    audit_fastness, check_causal_with_budget, check_one_version, check_progress, check_sampled,
    CheckError, SampleOptions, Verdict, DEFAULT_BUDGET,
};
use causalsim::harness::{run_spec, CompareRow, HarnessError, RunReport, WorkloadSpec};
use causalsim::history::{History, Tick, TxnId};
use causalsim::protocol::Registry;
use causalsim::simnet::MessageLog;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_BUDGET: u8 = 3;

/// Deterministic simulator and history checkers for causally consistent
/// transactional key-value stores.
#[derive(Parser)]
#[command(name = "causalsim", version)]
struct Cli {
    /// Print machine-readable JSON, including for errors.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one random workload against a protocol and check the result.
    Simulate(SimulateArgs),
    /// Run a checker over a recorded history.
    Check(CheckArgs),
    /// Run a scripted adversarial scenario.
    Adversary {
        #[command(subcommand)]
        command: AdversaryCommand,
    },
    /// Run the same workloads against several protocols and tabulate.
    Compare(CompareArgs),
    /// List registered protocol names.
    Protocols,
}

#[derive(Args, Clone, Default)]
struct SpecArgs {
    /// JSON file with workload fields. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clients: Option<u32>,
    #[arg(long)]
    servers: Option<u32>,
    #[arg(long)]
    objects: Option<usize>,
    /// Transactions per client.
    #[arg(long)]
    ops: Option<usize>,
    #[arg(long)]
    write_ratio: Option<f64>,
    #[arg(long)]
    rot_size: Option<usize>,
    /// Objects per write transaction.
    #[arg(long)]
    wot_size: Option<usize>,
    /// Required unless the config file sets it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<Tick>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    protocol: String,
    #[command(flatten)]
    spec: SpecArgs,
    /// Directory for history.jsonl, messages.jsonl and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckerName {
    Causal,
    Progress,
    Fastness,
    OneVersion,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    messages: Option<PathBuf>,
    #[arg(long, value_enum)]
    checker: CheckerName,
    /// Transaction to audit, as T<client>.<seq>.
    #[arg(long)]
    txn: Option<TxnId>,
    /// Tick after which reads count as post-quiescence probes.
    #[arg(long)]
    quiescence: Option<Tick>,
    /// Largest per-client transaction set searched exhaustively.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Check sampled sub-histories instead of failing over budget.
    #[arg(long)]
    sampled: bool,
}

#[derive(Subcommand)]
enum AdversaryCommand {
    Run(AdversaryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioName {
    E12,
    Eimp,
}

#[derive(Args)]
struct AdversaryArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioName,
    #[arg(long)]
    protocol: String,
    /// Number of probe boundaries for eimp.
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated protocol names.
    #[arg(long, value_delimiter = ',', required = true)]
    protocols: Vec<String>,
    #[command(flatten)]
    spec: SpecArgs,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<CheckError>() {
            Some(CheckError::BudgetExceeded { .. }) => EXIT_BUDGET,
            _ => EXIT_USAGE,
        };
        Failure { code, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            if json {
                println!(
                    "{}",
                    json!({"error": format!("{:#}", f.error), "exit_code": f.code})
                );
            } else {
                eprintln!("error: {:#}", f.error);
            }
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Simulate(args) => simulate(args, cli.json),
        Command::Check(args) => check(args, cli.json),
        Command::Adversary {
            command: AdversaryCommand::Run(args),
        } => adversary(args, cli.json),
        Command::Compare(args) => compare(args, cli.json),
        Command::Protocols => {
            let registry = Registry::builtin();
            let names: Vec<&str> = registry.names().collect();
            if cli.json {
                println!("{}", json!(names));
            } else {
                names.iter().for_each(|n| println!("{n}"));
            }
            Ok(0)
        }
    }
}

fn build_spec(args: &SpecArgs) -> anyhow::Result<WorkloadSpec> {
    let mut value = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => json!({}),
    };
    let obj = value
        .as_object_mut()
        .context("config file must hold a JSON object")?;
    let defaults = [
        ("clients", json!(4)),
        ("servers", json!(3)),
        ("ops_per_client", json!(50)),
        ("write_ratio", json!(0.05)),
    ];
    for (k, v) in defaults {
        obj.entry(k).or_insert(v);
    }
    let overrides = [
        ("clients", args.clients.map(|v| json!(v))),
        ("servers", args.servers.map(|v| json!(v))),
        ("objects", args.objects.map(|v| json!(v))),
        ("ops_per_client", args.ops.map(|v| json!(v))),
        ("write_ratio", args.write_ratio.map(|v| json!(v))),
        ("rot_size", args.rot_size.map(|v| json!(v))),
        ("wot_size", args.wot_size.map(|v| json!(v))),
        ("seed", args.seed.map(|v| json!(v))),
        ("horizon", args.horizon.map(|v| json!(v))),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            obj.insert(k.to_string(), v);
        }
    }
    if !obj.contains_key("seed") {
        bail!("a seed is required: pass --seed or set it in the config file");
    }
    let spec: WorkloadSpec = serde_json::from_value(value).context("invalid workload")?;
    if !(spec.write_ratio > 0.0 && spec.write_ratio < 1.0) {
        bail!("--write-ratio must lie strictly between 0 and 1");
    }
    if spec.clients == 0 || spec.servers == 0 || spec.objects == 0 {
        bail!("clients, servers and objects must be positive");
    }
    if spec.rot_size == 0 || spec.rot_size > spec.objects {
        bail!("--rot-size must be between 1 and the number of objects");
    }
    if spec.wot_size == 0 || spec.wot_size > spec.objects {
        bail!("--wot-size must be between 1 and the number of objects");
    }
    Ok(spec)
}

fn protocol(name: &str) -> anyhow::Result<causalsim::protocol::ProtocolHandle> {
    Ok(Registry::builtin().get(name)?)
}

fn write_artifacts(dir: &Path, report: &RunReport) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let out = &report.output;
    out.history
        .write_jsonl(BufWriter::new(File::create(dir.join("history.jsonl"))?))?;
    out.log
        .write_jsonl(BufWriter::new(File::create(dir.join("messages.jsonl"))?))?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report_json(report))?,
    )?;
    Ok(())
}

fn report_json(r: &RunReport) -> serde_json::Value {
    json!({
        "protocol": r.protocol,
        "spec": r.spec,
        "quiescence": r.output.quiescence,
        "incomplete": r.output.incomplete,
        "metrics": r.metrics,
        "causal": r.causal,
        "progress": r.progress,
        "one_version": r.one_version,
        "slow_rots": r.slow_rots,
    })
}

fn simulate(args: SimulateArgs, json: bool) -> Result<u8, Failure> {
    let spec = build_spec(&args.spec)?;
    let p = protocol(&args.protocol)?;
    let report = run_spec(p.as_ref(), &spec).map_err(harness_failure)?;
    if let Some(dir) = &args.out {
        write_artifacts(dir, &report)?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&report_json(&report))?);
    } else {
        let m = &report.metrics;
        println!("protocol        {}", report.protocol);
        println!("transactions    {} read-only, {} writes", m.rots, m.writes);
        println!(
            "rot rounds      mean {:.3}, fast {}/{}",
            m.mean_rot_rounds, m.fast_rots, m.rots
        );
        println!(
            "messages        {} client-server, {} server-server ({:.3} per write)",
            m.client_server_messages, m.server_server_messages, m.server_messages_per_write
        );
        println!("causal          {}", pass_word(report.causal.pass));
        match &report.progress {
            Some(v) => println!("progress        {}", pass_word(v.pass)),
            None => println!("progress        not checked (no quiescence)"),
        }
        println!("one-version     {}", pass_word(report.one_version.pass));
    }
    let ok = report.causal.pass && report.progress_ok() && report.one_version.pass;
    Ok(if ok { 0 } else { EXIT_FAIL })
}

fn harness_failure(e: HarnessError) -> Failure {
    match e {
        HarnessError::Check(c) => c.into(),
        HarnessError::Sim(s) => s.into(),
    }
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn read_history(path: &Path) -> anyhow::Result<History> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    History::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_messages(path: Option<&PathBuf>) -> anyhow::Result<MessageLog> {
    let path = path.context("this checker needs --messages")?;
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    MessageLog::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn check(args: CheckArgs, json: bool) -> Result<u8, Failure> {
    let h = read_history(&args.history)?;
    let verdict: Verdict = match args.checker {
        CheckerName::Causal => match check_causal_with_budget(&h, args.budget) {
            Ok(report) => report.verdict(),
            Err(CheckError::BudgetExceeded { .. }) if args.sampled => check_sampled(
                &h,
                SampleOptions {
                    budget: args.budget,
                    ..SampleOptions::default()
                },
            )?,
            Err(e) => return Err(e.into()),
        },
        CheckerName::Progress => {
            let q = args.quiescence.context("progress needs --quiescence")?;
            check_progress(&h, q)?
        }
        CheckerName::Fastness => {
            let log = read_messages(args.messages.as_ref())?;
            let txn = args.txn.context("fastness needs --txn")?;
            audit_fastness(&h, &log, txn)?
        }
        CheckerName::OneVersion => {
            let log = read_messages(args.messages.as_ref())?;
            let txn = args.txn.context("one-version needs --txn")?;
            check_one_version(&h, &log, txn, None)?
        }
    };
    if json {
        println!("{}", verdict.to_json());
    } else {
        println!("{}: {}", verdict.checker, pass_word(verdict.pass));
        if let Some(w) = &verdict.witness {
            println!("{}", serde_json::to_string_pretty(w)?);
        }
    }
    Ok(if verdict.pass { 0 } else { EXIT_FAIL })
}

fn adversary(args: AdversaryArgs, json: bool) -> Result<u8, Failure> {
    let p = protocol(&args.protocol)?;
    let report = match args.scenario {
        ScenarioName::E12 => scenario_e12(p.as_ref(), args.seed),
        ScenarioName::Eimp => scenario_eimp(p.as_ref(), args.k, args.seed),
    }
    .map_err(|e| match e {
        AdversaryError::Check(c) => c.into(),
        other => Failure::from(other),
    })?;
    if json {
        println!("{}", report.to_json());
    } else {
        println!("scenario        {}", report.scenario);
        println!("protocol        {}", report.protocol);
        println!("fast            {}", report.fast);
        if let Some(v) = report.visible {
            println!("visible         {v}");
        }
        println!("consistent      {}", report.consistent);
        if let Some(p) = report.progress {
            println!("progress        {p}");
        }
        println!("classification  {}", report.classification);
        for r in &report.results {
            let reads: Vec<String> = r.reads.iter().map(|(o, v)| format!("{o}={v}")).collect();
            println!("read {}       {}", r.txn, reads.join(" "));
        }
        if let Some(d) = &report.eimp {
            println!("inter-server    {}", d.inter_server_messages);
            for p in &d.probes {
                println!(
                    "probe {} at boundary {}: {:?}, checker {}",
                    p.txn,
                    p.boundary,
                    p.outcome,
                    pass_word(p.checker_pass)
                );
            }
        }
    }
    Ok(0)
}

fn compare(args: CompareArgs, json: bool) -> Result<u8, Failure> {
    let base = build_spec(&args.spec)?;
    let mut rows = Vec::new();
    for name in &args.protocols {
        let p = protocol(name)?;
        for s in 0..args.seeds {
            let spec = WorkloadSpec {
                seed: base.seed + s,
                ..base.clone()
            };
            let report = run_spec(p.as_ref(), &spec).map_err(harness_failure)?;
            rows.push(CompareRow::from(&report));
        }
    }
    let text = if json {
        serde_json::to_string_pretty(&rows)?
    } else {
        let mut t = String::from(CompareRow::csv_header());
        t.push('\n');
        for r in &rows {
            t.push_str(&r.to_csv());
            t.push('\n');
        }
        t
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let name = if json { "compare.json" } else { "compare.csv" };
        fs::write(dir.join(name), &text)?;
    }
    print!("{text}");
    if json {
        println!();
    }
    Ok(0)
}
