//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::bst::{derive_flowgraph, derived_quantities, Heap};
use crate::casl::scenario::{run_scenario, Options, Outcome};
use crate::error::{Error, Result};
use crate::estimator::DEFAULT_CLOSURE_CAP;
use crate::flowgraph::{compute_flow, FlowGraph};
use crate::keyspace::Universe;
use crate::oracle::{check_theorem, fuzz_bst, FuzzReport, Theorem, TheoremParams};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "flowcheck", version, about = "Flow-graph fixpoints and ground-level proof checking")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Emit a machine-readable report.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Round bound for flow iteration (default: 2n+2).
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true, default_value_t = DEFAULT_CLOSURE_CAP)]
    pub closure_cap: u128,
    #[arg(long, global = true, default_value_t = crate::casl::DEFAULT_LOOP_CAP)]
    pub loop_cap: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute the flow of a graph or heap file.
    Flow {
        file: PathBuf,
        /// Print the graph in DOT format.
        #[arg(long)]
        dot: bool,
    },
    /// Run a scenario file.
    Check { file: PathBuf },
    /// Random operation sequences against a set model.
    Fuzz {
        #[arg(long, default_value_t = 500)]
        sequences: u64,
        #[arg(long, default_value_t = 50)]
        ops: usize,
    },
    /// Check a lemma or theorem on enumerated or sampled instances.
    Oracle {
        #[arg(long)]
        theorem: String,
        #[arg(long, default_value_t = 3)]
        nodes: usize,
        #[arg(long, default_value_t = 1)]
        endpoints: usize,
        #[arg(long, default_value_t = 1000)]
        cases: u64,
    },
}

/// A finished run: exit code plus what to print.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub verdict: &'static str,
    pub details: Value,
    pub counterexample: Option<Value>,
    pub text: String,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            "pass" => EXIT_PASS,
            "fail" => EXIT_FAIL,
            "inconclusive" => EXIT_INCONCLUSIVE,
            _ => EXIT_INPUT,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "verdict": self.verdict, "details": self.details, "counterexample": self.counterexample })
    }

    fn input_error(e: &Error) -> Report {
        let verdict = if matches!(e, Error::MaxIterExceeded(_)) { "inconclusive" } else { "input-error" };
        Report { verdict, details: json!({ "error": e.to_string() }), counterexample: None, text: format!("error: {e}") }
    }
}

fn load(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn flow_report(v: &Value, max_iter: Option<usize>, dot: bool) -> Result<Report> {
    let is_heap = v.get("root").is_some();
    let (u, g, heap): (Universe, FlowGraph, Option<Heap>) = if is_heap {
        let (u, h) = Heap::from_json(v)?;
        let g = derive_flowgraph(&h, &u)?;
        (u, g, Some(h))
    } else {
        let (u, g) = FlowGraph::from_json(v)?;
        (u, g, None)
    };
    let flow = compute_flow(&g, max_iter.unwrap_or_else(|| g.default_max_iter()))?;
    if dot {
        let text = g.to_dot(&u);
        return Ok(Report { verdict: "pass", details: json!({ "dot": text }), counterexample: None, text });
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (&x, &m) in &flow {
        let mut row = json!({ "node": x, "inset": u.value_to_json(m) });
        let mut line = format!("{x:>4}  inset {}", u.show(m));
        if let Some(h) = &heap {
            let q = derived_quantities(h, &u, &flow, x)?;
            let n = h.node(x);
            row["key"] = n.key.to_json();
            row["del"] = json!(n.del);
            row["keyset"] = u.set_to_json(q.ks);
            line = format!("{x:>4}  key {:<5} inset {:<16} keyset {}", n.key.to_string(), u.show(m), u.show_set(q.ks));
        }
        rows.push(row);
        lines.push(line);
    }
    Ok(Report { verdict: "pass", details: json!({ "nodes": rows }), counterexample: None, text: lines.join("\n") })
}

fn check_report(v: &Value, opts: &Options) -> Result<Report> {
    let rep = run_scenario(v, opts)?;
    let verdict = match rep.outcome {
        Outcome::Pass => "pass",
        Outcome::Fail => "fail",
        Outcome::Inconclusive => "inconclusive",
    };
    let text = rep
        .steps
        .iter()
        .map(|s| format!("[{}] {}: {}", s.outcome.name(), s.label, s.detail))
        .chain(std::iter::once(format!("verdict: {verdict}")))
        .collect::<Vec<_>>()
        .join("\n");
    let j = rep.to_json();
    Ok(Report { verdict, details: j["steps"].clone(), counterexample: rep.counterexample, text })
}

/// Worker count from `FLOWCHECK_THREADS`, default 1.
pub fn threads() -> usize {
    std::env::var("FLOWCHECK_THREADS").ok().and_then(|s| s.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// Fans sequences out over workers by contiguous ranges and merges in order.
pub fn fuzz_parallel(sequences: u64, ops: usize, seed: u64, workers: usize) -> Result<FuzzReport> {
    let workers = (workers as u64).clamp(1, sequences.max(1));
    let chunk = sequences.div_ceil(workers);
    let parts: Vec<Result<FuzzReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = w * chunk..((w + 1) * chunk).min(sequences);
                s.spawn(move || fuzz_bst(sequences, ops, seed, range))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fuzz worker panicked")).collect()
    });
    let mut out = FuzzReport { sequences: 0, ops: 0, maintenance_done: 0, failures: Vec::new() };
    for p in parts {
        let p = p?;
        out.sequences += p.sequences;
        out.ops += p.ops;
        out.maintenance_done += p.maintenance_done;
        out.failures.extend(p.failures);
    }
    Ok(out)
}

fn fuzz_report(sequences: u64, ops: usize, seed: u64) -> Result<Report> {
    let r = fuzz_parallel(sequences, ops, seed, threads())?;
    let verdict = if r.failures.is_empty() { "pass" } else { "fail" };
    let counterexample = r.failures.first().map(|f| {
        json!({ "seed": seed, "sequence": f.sequence, "step": f.step, "op": f.op, "message": f.message, "heap": f.heap })
    });
    let text = match r.failures.first() {
        None => format!(
            "{} sequences, {} operations ({} maintenance steps applied), no failure",
            r.sequences, r.ops, r.maintenance_done
        ),
        Some(f) => format!("sequence {} step {} ({}): {}\nreplay with --seed {seed}", f.sequence, f.step, f.op, f.message),
    };
    let details = json!({ "sequences": r.sequences, "ops": r.ops, "maintenance": r.maintenance_done, "failures": r.failures.len() });
    Ok(Report { verdict, details, counterexample, text })
}

fn oracle_report(theorem: &str, p: &TheoremParams) -> Result<Report> {
    let th = Theorem::parse(theorem).ok_or_else(|| Error::Input(format!("unknown theorem {theorem:?}")))?;
    let r = check_theorem(th, p)?;
    let verdict = if r.passed() { "pass" } else { "fail" };
    let j = r.to_json();
    let counterexample = r.counterexamples.first().map(|c| json!({ "seed": p.seed, "case": c.case, "message": c.message, "instance": c.instance }));
    let text = match r.counterexamples.first() {
        None => format!("{}: {} cases, no counterexample", r.name, r.cases),
        Some(c) => format!("{}: counterexample at case {} (seed {}): {}", r.name, c.case, p.seed, c.message),
    };
    Ok(Report { verdict, details: j, counterexample, text })
}

pub fn execute(cli: &Cli) -> Report {
    let g = &cli.global;
    let opts = Options { closure_cap: g.closure_cap, loop_cap: g.loop_cap, seed: g.seed };
    let result = match &cli.command {
        Command::Flow { file, dot } => load(file).and_then(|v| flow_report(&v, g.max_iter, *dot)),
        Command::Check { file } => load(file).and_then(|v| check_report(&v, &opts)),
        Command::Fuzz { sequences, ops } => fuzz_report(*sequences, *ops, g.seed),
        Command::Oracle { theorem, nodes, endpoints, cases } => {
            let p = TheoremParams { nodes: *nodes, endpoints: *endpoints, cases: *cases, seed: g.seed, cap: g.closure_cap, ..TheoremParams::default() };
            oracle_report(theorem, &p)
        }
    };
    result.unwrap_or_else(|e| Report::input_error(&e))
}

/// Parses, runs and prints; returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
            let _ = if e.use_stderr() { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return code;
        }
    };
    let rep = execute(&cli);
    let _ = if cli.global.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&rep.to_json()).expect("report serializes"))
    } else if rep.verdict == "input-error" {
        writeln!(err, "{}", rep.text)
    } else {
        writeln!(out, "{}", rep.text)
    };
    rep.exit_code()
}
