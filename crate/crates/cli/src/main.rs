use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use presage::campaign::{compare_report, run_campaign, CampaignConfig, CampaignResult, Variant};
use presage::cfg::analyze;
use presage::interp::{classify, trace_csv, Arg, ErrorModel, FaultSpec, Interpreter, RunConfig, Status};
use presage::ir::{parse_ir, print_ir, Function, ValueType};
use presage::kernels::{self, DIC_CAP};
use presage::transform::{transform_with, TransformOptions};
use serde_json::json;

#[derive(Parser)]
#[command(name = "presage", version, about = "Relative-base address chaining and fault-injection campaigns")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Chain the address computations of a function and add exit detectors.
    Transform {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Chain only; do not insert detectors.
        #[arg(long)]
        no_detectors: bool,
        /// Write the per-base transform report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Execute a function, optionally injecting one bit flip.
    Run {
        /// IR file to execute.
        #[arg(required_unless_present = "kernel")]
        input: Option<PathBuf>,
        /// Run a corpus kernel with generated inputs instead of a file.
        #[arg(long, conflicts_with = "input")]
        kernel: Option<String>,
        /// Transform the function before running it.
        #[arg(long)]
        presage: bool,
        /// Scalar argument, `name=value`. Repeatable.
        #[arg(long = "arg", value_parser = parse_kv)]
        args: Vec<(String, String)>,
        /// Seed for array contents (and kernel parameters with --kernel).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fault to inject, `em1:K:BIT` or `em2:K:BIT`.
        #[arg(long)]
        inject: Option<FaultSpec>,
        /// Multiplier on the fault-free instruction count that marks a hang.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        budget_multiplier: u64,
        /// Write the execution trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print control-flow facts as JSON.
    Cfg {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// List the kernel corpus or write it out as IR files.
    Kernels {
        /// Print a table of kernels (the default).
        #[arg(long)]
        list: bool,
        /// Print the corpus metadata as JSON.
        #[arg(long)]
        json: bool,
        /// Write `<name>.pir` for every kernel into this directory.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Run a fault-injection campaign on a corpus kernel.
    Campaign {
        #[arg(long)]
        kernel: String,
        #[arg(long, default_value = "native")]
        variant: Variant,
        #[arg(long, default_value = "em1")]
        model: ErrorModel,
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        budget_multiplier: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Write per-run records as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tabulate campaign results per kernel.
    Compare {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Failure with its exit status: 2 for bad input, 1 for everything else.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure { code: 1, err }
    }
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let k = k.trim_start_matches('%');
    if k.is_empty() {
        return Err(format!("empty name in `{s}`"));
    }
    Ok((k.to_string(), v.to_string()))
}

fn read_function(path: &Path) -> Result<Function, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)?;
    parse_ir(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(usage)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        // A closed pipe (`presage ... | head`) is not an error.
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Transform {
            input,
            output,
            no_detectors,
            report,
        } => {
            let f = read_function(&input)?;
            let opts = TransformOptions {
                detectors: !no_detectors,
            };
            let (t, rep) = transform_with(&f, opts).map_err(|e| anyhow!(e))?;
            emit(output.as_deref(), &print_ir(&t))?;
            if let Some(r) = report {
                emit(Some(&r), &pretty(&rep))?;
            }
        }
        Cmd::Run {
            input,
            kernel,
            presage,
            args,
            seed,
            inject,
            budget_multiplier,
            trace,
            output,
        } => {
            let (mut f, inputs) = match (&input, &kernel) {
                (Some(path), _) => {
                    let f = read_function(path)?;
                    let given = scalar_args(&f, &args).map_err(usage)?;
                    let inputs = kernels::inputs_from_scalars(&f, &given, seed)
                        .map_err(|e| usage(anyhow!(e)))?;
                    (f, inputs)
                }
                (None, Some(name)) => {
                    if !args.is_empty() {
                        return Err(usage(anyhow!("--arg cannot be combined with --kernel")));
                    }
                    let spec = kernels::spec(name).map_err(|e| usage(anyhow!(e)))?;
                    let inputs = kernels::gen_inputs(&spec, seed);
                    (spec.build(), inputs)
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            if presage {
                f = transform_with(&f, TransformOptions::default())
                    .map_err(|e| anyhow!(e))?
                    .0;
            }
            let (mem, argv) = inputs;
            let interp = Interpreter::new(&f);
            let ff = interp
                .run(
                    &mem,
                    &argv,
                    &RunConfig {
                        budget: DIC_CAP,
                        fault: None,
                        trace: trace.is_some() && inject.is_none(),
                    },
                )
                .map_err(|e| usage(anyhow!(e)))?;
            let mut doc = json!({
                "function": f.name,
                "fault_free": exec_json(&f, &ff),
            });
            let mut traced = &ff;
            let faulty;
            if let Some(fault) = inject {
                faulty = interp
                    .run(
                        &mem,
                        &argv,
                        &RunConfig {
                            budget: ff.dic.saturating_mul(budget_multiplier),
                            fault: Some(fault),
                            trace: trace.is_some(),
                        },
                    )
                    .map_err(|e| usage(anyhow!(e)))?;
                doc["fault"] = json!(fault);
                doc["faulty"] = exec_json(&f, &faulty);
                doc["outcome"] = match classify(&ff, &faulty) {
                    Ok(o) => json!(o),
                    Err(e) => json!({ "error": e.to_string() }),
                };
                traced = &faulty;
            }
            if let Some(path) = trace {
                emit(Some(&path), &trace_csv(&f, &traced.trace))?;
            }
            emit(output.as_deref(), &pretty(&doc))?;
        }
        Cmd::Cfg { input, output } => {
            let f = read_function(&input)?;
            let facts = analyze(&f).map_err(|e| anyhow!(e))?;
            emit(output.as_deref(), &pretty(&facts.report(&f)))?;
        }
        Cmd::Kernels { list, json, emit: dir } => {
            if let Some(dir) = &dir {
                fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
                for k in kernels::corpus() {
                    let path = dir.join(format!("{}.pir", k.name));
                    emit(Some(&path), &print_ir(&k.build()))?;
                }
            }
            if json {
                emit(None, &pretty(&kernels::corpus()))?;
            } else if list || dir.is_none() {
                let mut out = format!("{:<15} {:<11} {:<8} params\n", "name", "category", "derived");
                for k in kernels::corpus() {
                    let params: Vec<String> = k
                        .params
                        .iter()
                        .map(|p| format!("{}=[{},{}]", p.name, p.lo, p.hi))
                        .collect();
                    let cat = serde_json::to_value(k.category).expect("serializable");
                    let _ = writeln!(
                        out,
                        "{:<15} {:<11} {:<8} {}  {}",
                        k.name,
                        cat.as_str().unwrap_or_default(),
                        k.has_derived_bases,
                        params.join(" "),
                        k.description
                    );
                }
                emit(None, &out)?;
            }
        }
        Cmd::Campaign {
            kernel,
            variant,
            model,
            runs,
            seed,
            budget_multiplier,
            output,
            csv,
        } => {
            kernels::spec(&kernel).map_err(|e| usage(anyhow!(e)))?;
            let cfg = CampaignConfig {
                kernel,
                variant,
                model,
                runs,
                seed,
                budget_multiplier,
            };
            let result = run_campaign(&cfg).map_err(|e| anyhow!(e))?;
            emit(output.as_deref(), &result.to_json())?;
            if let Some(path) = csv {
                let mut w = csv::Writer::from_path(&path)
                    .with_context(|| format!("cannot write {}", path.display()))?;
                for r in &result.records {
                    w.serialize(r).context("writing CSV record")?;
                }
                w.flush().context("writing CSV")?;
            }
        }
        Cmd::Compare { inputs, output } => {
            let mut results = Vec::new();
            for path in &inputs {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))
                    .map_err(usage)?;
                let r: CampaignResult = serde_json::from_str(&text)
                    .with_context(|| format!("{} is not a campaign report", path.display()))
                    .map_err(usage)?;
                results.push(r);
            }
            emit(output.as_deref(), &pretty(&compare_report(&results)))?;
        }
    }
    Ok(())
}

fn scalar_args(f: &Function, given: &[(String, String)]) -> Result<Vec<(String, Arg)>> {
    given
        .iter()
        .map(|(name, text)| {
            let v = f
                .find_value(name)
                .ok_or_else(|| anyhow!("function has no parameter %{name}"))?;
            let arg = match f.ty(v) {
                ValueType::Int64 => Arg::Int(
                    text.parse()
                        .with_context(|| format!("%{name} needs an integer, got `{text}`"))?,
                ),
                ValueType::Float64 => Arg::Float(
                    text.parse()
                        .with_context(|| format!("%{name} needs a number, got `{text}`"))?,
                ),
                ValueType::Addr => bail!("%{name} is an array; arrays are generated from --seed"),
            };
            Ok((name.clone(), arg))
        })
        .collect()
}

fn exec_json(f: &Function, r: &presage::interp::ExecResult) -> serde_json::Value {
    let (status, reason) = match r.status {
        Status::Completed => ("completed", None),
        Status::Hang => ("hang", None),
        Status::Crash(c) => ("crash", Some(c.to_string())),
    };
    let results: serde_json::Map<String, serde_json::Value> = r
        .results
        .iter()
        .map(|a| {
            let elem = f
                .find_value(&a.param)
                .and_then(|v| f.params.iter().find(|p| p.value == v))
                .and_then(|p| p.array.as_ref())
                .map(|d| d.elem)
                .unwrap_or(ValueType::Float64);
            let words = a
                .bytes
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")));
            let vals: Vec<serde_json::Value> = match elem {
                ValueType::Int64 => words.map(|w| json!(w as i64)).collect(),
                _ => words.map(|w| json!(f64::from_bits(w))).collect(),
            };
            (a.param.clone(), serde_json::Value::Array(vals))
        })
        .collect();
    json!({
        "status": status,
        "crash_reason": reason,
        "dic": r.dic,
        "detect_count": r.detect_count,
        "em1_sites": r.em1_sites,
        "em2_sites": r.em2_sites,
        "injected": r.injected,
        "results": results,
    })
}
