//! The `lsk` command-line tool.
//!
//! Flags resolve to a fully specified [`commands::Invocation`], which is echoed
//! with every result. `lsk replay <file>` re-executes an echoed invocation and
//! reproduces the original output byte for byte.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use clap::Parser;
use serde_json::{json, Value};

use lsk_core::analysis::RfWeighting;
use lsk_core::cost::CostScope;
use lsk_core::exec::{threads_from_env, with_threads};
use lsk_core::gradcheck::GradCheckConfig;
use lsk_core::lsk::SelectionMode;
use lsk_core::nn::PoolMode;
use lsk_core::search::{default_k_candidates, Objective, SearchQuery};
use lsk_core::{DecompositionPlan, Error};

use args::{Cli, ConvKindArg, MetricArg, ModeArg, ModelArgs, ObjectiveArg, OpArg, PoolArg, ScopeArg, Sub, WeightingArg};
use commands::{
    contract, AnalyzeCommand, Command, CostCommand, CostTarget, ExportCommand, ForwardCommand, GradOp,
    GradcheckCommand, Invocation, ModelSource, PlanCheckCommand, PlanCommand,
};
use config::resolve_backbone;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONTRACT: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;

/// Run with process stdout/stderr and return the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// Run with explicit output streams and return the exit code.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONTRACT } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let threads = match cli.threads {
        Some(t) => Ok(t),
        None => threads_from_env().map_err(contract),
    };
    let result = threads.and_then(|t| {
        let json = cli.json;
        with_threads(t, move || dispatch(json, cli.command))
    });
    match result {
        Ok((text, code)) => {
            let _ = out.write_all(text.as_bytes());
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error: contract violations are 2, everything else
/// (malformed files, I/O, parse failures) is 3.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::Contract(_) => EXIT_CONTRACT,
                _ => EXIT_FORMAT,
            };
        }
    }
    EXIT_FORMAT
}

fn dispatch(json: bool, sub: Sub) -> Result<(String, i32)> {
    let inv = match sub {
        Sub::Replay(r) => read_replay(&r.file)?,
        other => Invocation { json, command: resolve(other)? },
    };
    render(&inv)
}

/// Execute an invocation and format its output.
pub fn render(inv: &Invocation) -> Result<(String, i32)> {
    let outcome = commands::execute(&inv.command)?;
    let config = serde_json::to_value(inv)?;
    let text = if inv.json {
        let mut s = serde_json::to_string_pretty(&json!({ "config": config, "result": outcome.value }))?;
        s.push('\n');
        s
    } else {
        format!("{}config: {}\n", outcome.human, serde_json::to_string(&config)?)
    };
    Ok((text, outcome.exit))
}

/// Accepts the JSON output of a command, its bare `config` object, or human
/// output containing a `config:` line.
pub fn parse_replay(text: &str) -> Result<Invocation> {
    let value: Value = match serde_json::from_str::<Value>(text) {
        Ok(v) => v,
        Err(_) => {
            let line = text
                .lines()
                .rev()
                .find_map(|l| l.strip_prefix("config: "))
                .ok_or_else(|| Error::format("replay input has no JSON config and no `config:` line"))?;
            serde_json::from_str(line).map_err(|e| Error::format(format!("replay config line: {e}")))?
        }
    };
    let config = match value.get("config") {
        Some(c) if value.get("result").is_some() => c.clone(),
        _ => value,
    };
    Ok(serde_json::from_value(config).map_err(|e| Error::format(format!("replay config: {e}")))?)
}

fn read_replay(path: &Path) -> Result<Invocation> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_replay(&text)
}

/// Parse `S` or `HxW`.
fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some([n]) => Ok((*n, *n)),
        Some([h, w]) => Ok((*h, *w)),
        _ => Err(contract(format!("size {s:?} must be S or HxW"))),
    }
}

fn parse_plan(s: &str) -> Result<DecompositionPlan> {
    Ok(s.parse::<DecompositionPlan>()?)
}

fn scope(s: ScopeArg, selection_kernel: usize) -> CostScope {
    let base = match s {
        ScopeArg::Comparison => CostScope::COMPARISON,
        ScopeArg::Full => CostScope::FULL,
        ScopeArg::Depthwise => CostScope::DEPTHWISE,
    };
    CostScope { selection_kernel, ..base }
}

fn pooling(p: PoolArg) -> PoolMode {
    match p {
        PoolArg::Avg => PoolMode::Avg,
        PoolArg::Max => PoolMode::Max,
        PoolArg::Both => PoolMode::Both,
    }
}

fn mode(m: ModeArg) -> SelectionMode {
    match m {
        ModeArg::Spatial => SelectionMode::Spatial,
        ModeArg::Channel => SelectionMode::Channel,
        ModeArg::SpatialChannel => SelectionMode::SpatialChannel,
        ModeArg::None => SelectionMode::None,
    }
}

fn model(m: &ModelArgs) -> Result<ModelSource> {
    Ok(match &m.weights {
        Some(path) => ModelSource::Bundle { path: path.clone() },
        None => ModelSource::Init { config: resolve_backbone(m.preset.as_deref(), m.config.as_deref())?, seed: m.seed },
    })
}

/// Resolve parsed flags into a fully specified command.
pub fn resolve(sub: Sub) -> Result<Command> {
    Ok(match sub {
        Sub::Plan(a) => {
            if let Some(check) = &a.check {
                Command::PlanCheck(PlanCheckCommand { specs: commands::raw_specs(check)? })
            } else {
                let rf = a.rf.ok_or_else(|| contract("plan needs --rf or --check"))?;
                let mut q = SearchQuery::new(rf, a.max_branches)
                    .with_kernels(&a.kernels.clone().unwrap_or_else(default_k_candidates))
                    .with_objective(match a.objective {
                        ObjectiveArg::Params => Objective::MinParams,
                        ObjectiveArg::Flops => Objective::MinFlops,
                    });
                q.channels = a.channels;
                q.spatial = parse_size(&a.size)?;
                q.scope = scope(a.scope, a.selection_kernel);
                Command::Plan(PlanCommand { query: q, top: a.top })
            }
        }
        Sub::Cost(a) => {
            let spatial = parse_size(&a.size)?;
            let target = match &a.plan {
                Some(p) => CostTarget::Plan {
                    plan: parse_plan(p)?,
                    vs: a.vs.as_deref().map(parse_plan).transpose()?,
                    channels: a.channels,
                    spatial,
                    scope: scope(a.scope, a.selection_kernel),
                },
                None => CostTarget::Backbone { config: resolve_backbone(a.preset.as_deref(), a.config.as_deref())?, spatial },
            };
            Command::Cost(CostCommand { target, show_ledger: a.ledger })
        }
        Sub::Forward(a) => Command::Forward(ForwardCommand {
            model: model(&a.model)?,
            input: a.model.input.clone(),
            out: a.out,
            save_weights: a.save_weights,
        }),
        Sub::Export(a) => Command::Export(ExportCommand {
            model: model(&a.model)?,
            input: a.model.input.clone(),
            out: a.out,
            image_id: a.image_id,
        }),
        Sub::Gradcheck(a) => {
            let op = match a.op {
                OpArg::Conv2d => GradOp::Conv2d,
                OpArg::Pool => GradOp::Pool,
                OpArg::GlobalPool => GradOp::GlobalPool,
                OpArg::Sigmoid => GradOp::Sigmoid,
                OpArg::Gelu => GradOp::Gelu,
                OpArg::Affine => GradOp::Affine,
                OpArg::Lsk => GradOp::Lsk,
                OpArg::Block => GradOp::Block,
                OpArg::Backbone => GradOp::Backbone,
            };
            let (channels, size, tol) = match op {
                GradOp::Conv2d | GradOp::Lsk => (3, 6, 1e-6),
                GradOp::Block => (8, 6, 1e-6),
                GradOp::Backbone => (4, 32, 1e-5),
                _ => (3, 4, 1e-6),
            };
            let check = GradCheckConfig {
                eps: a.eps,
                rel_tol: a.tol.unwrap_or(tol),
                floor: a.floor,
                max_per_tensor: a.max_per_tensor,
            };
            Command::Gradcheck(GradcheckCommand {
                op,
                depthwise: a.kind == ConvKindArg::Depthwise,
                k: a.k,
                d: a.d,
                stride: a.stride,
                channels: a.channels.unwrap_or(channels),
                spatial: match &a.size {
                    Some(s) => parse_size(s)?,
                    None => (size, size),
                },
                pooling: pooling(a.pooling),
                selection_mode: mode(a.selection_mode),
                plan: parse_plan(&a.plan)?,
                seed: a.seed,
                check,
            })
        }
        Sub::Analyze(a) => Command::Analyze(AnalyzeCommand {
            traces: a.traces,
            annotations: a.annotations,
            weighting: match a.weighting {
                WeightingArg::Linear => RfWeighting::Linear,
                WeightingArg::Area => RfWeighting::Area,
            },
            ratio: a.metric != MetricArg::Selection,
            selection: a.metric != MetricArg::Ratio,
            report: a.report,
        }),
        Sub::Replay(_) => return Err(contract("replay cannot be nested")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("lsk").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("1024").unwrap(), (1024, 1024));
        assert_eq!(parse_size("32x64").unwrap(), (32, 64));
        assert!(parse_size("3x4x5").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_str(&["plan", "--bogus"]).0, EXIT_CONTRACT);
        assert_eq!(run_str(&["plan", "--rf", "99"]).0, EXIT_CONTRACT);
    }

    #[test]
    fn human_output_ends_with_config() {
        let (code, out, _) = run_str(&["plan", "--rf", "23"]);
        assert_eq!(code, 0);
        let inv = parse_replay(&out).unwrap();
        assert_eq!(render(&inv).unwrap().0, out);
    }

    #[test]
    fn replay_accepts_json_forms() {
        let (_, out, _) = run_str(&["--json", "plan", "--check", "(3,1)->(5,2)"]);
        let inv = parse_replay(&out).unwrap();
        assert!(inv.json);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(parse_replay(&v["config"].to_string()).unwrap(), inv);
        assert!(parse_replay("nothing here").is_err());
    }
}
