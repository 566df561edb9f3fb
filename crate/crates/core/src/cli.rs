//! Command-line front end. Every command reads an instance file (optionally
//! carrying a `bids` array), runs one operation and writes a JSON report, or
//! a CSV row for `ranking-ratio --format csv`.
//!
//! Exit codes: 0 success, 1 a verification predicate failed, 2 usage or
//! input error.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::covering::{
    chain_report, enumerate_matchings, max_weight_feasible_matching, value_covering_check,
    verify_revenue_covering, MAX_ENUMERATION_EDGES, ONE_MINUS_INV_E,
};
use crate::equilibrium::{
    find_pure_equilibria, poa_welfare_violations, verify_poa_bound, GameConfig,
};
use crate::error::Error;
use crate::instance::{gen_random, gen_triangular, Instance};
use crate::mechanism::{all_critical_bids, run_auction, BidProfile};
use crate::ranking::{
    estimate_competitive_ratio, exact_ranking_expectation, greedy_nonstrategic,
    optimal_matching_size,
};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Generate,
    Simulate,
    CriticalBids,
    VerifyCovering,
    VerifyChain,
    RankingRatio,
    ExactRanking,
    Greedy,
    Equilibria,
    VerifyPoa,
    ValueCovering,
}

impl Command {
    fn needs_input(self) -> bool {
        !matches!(self, Command::Generate | Command::ValueCovering)
    }

    fn name(self) -> String {
        self.to_possible_value()
            .expect("no skipped variants")
            .get_name()
            .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Random,
    Triangular,
}

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(
    name = "matchcover",
    version,
    about = "Online bipartite matching auctions: simulation and verification"
)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,

    /// Instance file (JSON).
    pub input_path: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,

    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,

    #[arg(long = "grid-step", default_value_t = 0.05)]
    pub grid_step: f64,

    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Write the report here instead of standard output.
    #[arg(long = "out")]
    pub output_path: Option<PathBuf>,

    /// Instance family for `generate`.
    #[arg(long, value_enum, default_value_t = Family::Random)]
    pub family: Family,

    /// Size of a triangular instance.
    #[arg(long, default_value_t = 4)]
    pub n: usize,

    #[arg(long, default_value_t = 4)]
    pub buyers: usize,

    #[arg(long, default_value_t = 4)]
    pub items: usize,

    #[arg(long = "edge-prob", default_value_t = 0.5)]
    pub edge_prob: f64,

    #[arg(long = "value-low", default_value_t = 1.0)]
    pub value_low: f64,

    #[arg(long = "value-high", default_value_t = 1.0)]
    pub value_high: f64,
}

#[derive(Debug)]
pub struct UsageError {
    pub message: String,
    /// Help and version requests are not failures.
    pub is_help: bool,
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Parses `argv` (without the program name).
pub fn parse_args<I, S>(argv: I) -> Result<RunConfig, UsageError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let full = std::iter::once(std::ffi::OsString::from("matchcover"))
        .chain(argv.into_iter().map(Into::into));
    let cfg = RunConfig::try_parse_from(full).map_err(|e| UsageError {
        message: e.render().to_string(),
        is_help: matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ),
    })?;
    let usage = |message: String| UsageError {
        message,
        is_help: false,
    };

    if cfg.command.needs_input() && cfg.input_path.is_none() {
        return Err(usage(format!(
            "command '{}' requires an instance file",
            cfg.command.name()
        )));
    }
    if cfg.trials == 0 {
        return Err(usage("--trials must be >= 1".into()));
    }
    if !(cfg.mu.is_finite() && cfg.mu > 0.0) {
        return Err(usage(format!("--mu must be positive, got {}", cfg.mu)));
    }
    if !(cfg.grid_step.is_finite() && cfg.grid_step > 0.0) {
        return Err(usage(format!(
            "--grid-step must be positive, got {}",
            cfg.grid_step
        )));
    }
    if !(cfg.epsilon.is_finite() && cfg.epsilon >= 0.0) {
        return Err(usage(format!(
            "--epsilon must be >= 0, got {}",
            cfg.epsilon
        )));
    }
    if cfg.format == Format::Csv && cfg.command != Command::RankingRatio {
        return Err(usage(
            "--format csv is only available for ranking-ratio".into(),
        ));
    }
    Ok(cfg)
}

/// A finished run: the bytes to emit and whether every predicate held.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub text: String,
    pub holds: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

#[derive(Deserialize)]
struct BidsField {
    #[serde(default)]
    bids: Option<Vec<f64>>,
}

struct Input {
    inst: Instance,
    bids: Option<Vec<f64>>,
}

fn load(path: &PathBuf) -> Result<Input, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    let inst = Instance::from_json(&text)?;
    let extra: BidsField = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(Input {
        inst,
        bids: extra.bids,
    })
}

/// Bids from the file, or i.i.d. uniform on `[0, v_i]` from the seed.
fn bids_for(input: &Input, seed: u64) -> Result<BidProfile, Error> {
    let profile = match &input.bids {
        Some(b) => BidProfile::new(b.clone()),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            BidProfile::new(
                input
                    .inst
                    .values
                    .iter()
                    .map(|&v| rng.gen_range(0.0..=v))
                    .collect(),
            )
        }
    };
    profile.check_for(&input.inst)?;
    Ok(profile)
}

#[derive(Serialize)]
struct Report<'a> {
    command: String,
    seed: u64,
    instance_hash: Option<String>,
    tool_version: &'a str,
    parameters: Value,
    result: Value,
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

/// Executes `cfg` and renders its output without touching stdout.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let input = match (&cfg.input_path, cfg.command.needs_input()) {
        (Some(p), _) => Some(load(p)?),
        (None, false) => None,
        (None, true) => return Err(Error::Parameter("missing instance file".into()).into()),
    };
    let inst = input.as_ref().map(|i| &i.inst);

    let mut holds = true;
    let result = match cfg.command {
        Command::Generate => {
            let inst = match cfg.family {
                Family::Triangular => gen_triangular(cfg.n)?,
                Family::Random => gen_random(
                    cfg.buyers,
                    cfg.items,
                    cfg.edge_prob,
                    cfg.value_low,
                    cfg.value_high,
                    cfg.seed,
                )?,
            };
            return Ok(RunOutput {
                text: inst.to_json()? + "\n",
                holds: true,
            });
        }
        Command::Simulate => {
            let input = input.as_ref().expect("checked");
            let bids = bids_for(input, cfg.seed)?;
            let outcome = run_auction(&input.inst, &bids)?;
            json!({ "bids": bids, "outcome": outcome })
        }
        Command::CriticalBids => {
            let input = input.as_ref().expect("checked");
            let bids = bids_for(input, cfg.seed)?;
            let critical = all_critical_bids(&input.inst, &bids)?;
            json!({ "bids": bids, "critical_bids": critical })
        }
        Command::VerifyCovering => {
            let input = input.as_ref().expect("checked");
            let bids = bids_for(input, cfg.seed)?;
            let report = verify_revenue_covering(&input.inst, &bids, cfg.mu)?;
            holds = report.holds;
            json!({ "bids": bids, "covering": report })
        }
        Command::VerifyChain => {
            let input = input.as_ref().expect("checked");
            let bids = bids_for(input, cfg.seed)?;
            let (value, ok) = chain_sweep(&input.inst, &bids)?;
            holds = ok;
            value
        }
        Command::RankingRatio => {
            let inst = inst.expect("checked");
            let est = estimate_competitive_ratio(inst, cfg.trials, cfg.seed)?;
            if cfg.format == Format::Csv {
                let id = inst.content_hash()[..12].to_string();
                let mut w = csv::Writer::from_writer(Vec::new());
                w.serialize(est.row(&id, inst.n_buyers))
                    .expect("in-memory csv write");
                let bytes = w.into_inner().expect("in-memory csv flush");
                return Ok(RunOutput {
                    text: String::from_utf8(bytes).expect("csv output is utf-8"),
                    holds: true,
                });
            }
            to_value(&est)
        }
        Command::ExactRanking => {
            let inst = inst.expect("checked");
            let expectation = exact_ranking_expectation(inst)?;
            let opt = optimal_matching_size(inst);
            let ratio = if opt > 0 {
                expectation / opt as f64
            } else {
                1.0
            };
            let above_guarantee = ratio >= ONE_MINUS_INV_E;
            holds = above_guarantee;
            json!({
                "expectation": expectation,
                "opt": opt,
                "ratio": ratio,
                "guarantee": ONE_MINUS_INV_E,
                "above_guarantee": above_guarantee,
            })
        }
        Command::Greedy => {
            let inst = inst.expect("checked");
            let m = greedy_nonstrategic(inst);
            let opt = optimal_matching_size(inst);
            let maximal = m.is_maximal(inst);
            let within_factor_two = 2 * m.len() >= opt;
            holds = maximal && within_factor_two;
            json!({
                "matching": m,
                "size": m.len(),
                "opt": opt,
                "approximation": if m.is_empty() { None } else { Some(opt as f64 / m.len() as f64) },
                "maximal": maximal,
                "within_factor_two": within_factor_two,
            })
        }
        Command::Equilibria | Command::VerifyPoa => {
            let inst = inst.expect("checked");
            let game = GameConfig::new(inst.clone(), cfg.grid_step, cfg.epsilon)?;
            let result = find_pure_equilibria(&game)?;
            if cfg.command == Command::Equilibria {
                to_value(&result)
            } else {
                let slack = game.default_slack();
                let violations = poa_welfare_violations(&result, cfg.mu, slack);
                let ratio_slack = if result.opt_welfare > 0.0 {
                    slack / result.opt_welfare
                } else {
                    0.0
                };
                let ratio_bound_holds = verify_poa_bound(&result, cfg.mu, ratio_slack);
                holds = violations.is_empty() && ratio_bound_holds;
                json!({
                    "equilibria": result.profiles.len(),
                    "opt_welfare": result.opt_welfare,
                    "min_ratio": result.min_ratio,
                    "bound": ONE_MINUS_INV_E / cfg.mu,
                    "welfare_slack": slack,
                    "violations": violations.iter().map(|&k| json!({
                        "profile": result.profiles[k],
                        "welfare": result.welfares[k],
                    })).collect::<Vec<_>>(),
                    "holds": holds,
                })
            }
        }
        Command::ValueCovering => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let report = value_covering_check(1.0, 100, cfg.trials, &mut rng)?;
            holds = report.holds;
            to_value(&report)
        }
    };

    let report = Report {
        command: cfg.command.name(),
        seed: cfg.seed,
        instance_hash: inst.map(Instance::content_hash),
        tool_version: TOOL_VERSION,
        parameters: json!({
            "trials": cfg.trials,
            "mu": cfg.mu,
            "grid_step": cfg.grid_step,
            "epsilon": cfg.epsilon,
        }),
        result,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    Ok(RunOutput { text, holds })
}

/// Proof chain over every feasible matching when enumeration is allowed,
/// otherwise over the covering witness alone.
fn chain_sweep(inst: &Instance, bids: &BidProfile) -> Result<(Value, bool), Error> {
    let outcome = run_auction(inst, bids)?;
    let weights = all_critical_bids(inst, bids)?.covering_weights();

    let exhaustive = inst.edges.len() <= MAX_ENUMERATION_EDGES;
    let matchings: Box<dyn Iterator<Item = _>> = if exhaustive {
        Box::new(enumerate_matchings(inst)?)
    } else {
        Box::new(std::iter::once(
            max_weight_feasible_matching(inst, &weights)?.0,
        ))
    };

    let mut checked = 0usize;
    let mut failures = Vec::new();
    let mut min_revenue_gap = f64::INFINITY;
    let mut min_critical_gap = f64::INFINITY;
    for m in matchings {
        let r = chain_report(&outcome.item_revenues, outcome.revenue, &weights, &m);
        checked += 1;
        min_revenue_gap = min_revenue_gap.min(r.sum_winning_bids - r.matched_item_revenue);
        min_critical_gap = min_critical_gap.min(r.matched_item_revenue - r.critical_surplus);
        if !r.holds {
            failures.push(json!({ "matching": m, "chain": r }));
        }
    }
    let holds = failures.is_empty();
    Ok((
        json!({
            "bids": bids,
            "exhaustive": exhaustive,
            "matchings_checked": checked,
            "min_revenue_gap": min_revenue_gap,
            "min_critical_gap": min_critical_gap,
            "failures": failures,
            "holds": holds,
        }),
        holds,
    ))
}

/// Runs `cfg`, writes the output, and returns the process exit code.
pub fn run(cfg: &RunConfig) -> i32 {
    let out = match execute(cfg) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let written = match &cfg.output_path {
        Some(p) => std::fs::write(p, &out.text),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(out.text.as_bytes())
        }
    };
    if let Err(e) = written {
        eprintln!("error: cannot write output: {e}");
        return EXIT_USAGE;
    }
    if out.holds {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_covering_flags() {
        let cfg = parse_args(["verify-covering", "inst.json", "--mu", "1"]).unwrap();
        assert_eq!(cfg.command, Command::VerifyCovering);
        assert_eq!(cfg.mu, 1.0);
        assert_eq!(cfg.input_path, Some(PathBuf::from("inst.json")));
        assert_eq!(
            (cfg.seed, cfg.trials, cfg.grid_step, cfg.epsilon),
            (0, 10_000, 0.05, 0.0)
        );
        assert_eq!(cfg.format, Format::Json);
    }

    #[test]
    fn parses_ratio_flags() {
        let cfg = parse_args([
            "ranking-ratio",
            "inst.json",
            "--trials",
            "100000",
            "--seed",
            "7",
        ])
        .unwrap();
        assert_eq!((cfg.trials, cfg.seed), (100_000, 7));
    }

    #[test]
    fn usage_errors() {
        assert!(parse_args(["simulate"]).is_err());
        assert!(parse_args(["simulate", "x.json", "--bogus"]).is_err());
        assert!(parse_args(Vec::<String>::new()).is_err());
        assert!(parse_args(["frobnicate", "x.json"]).is_err());
        assert!(parse_args(["simulate", "x.json", "--format", "csv"]).is_err());
        assert!(parse_args(["equilibria", "x.json", "--grid-step", "0"]).is_err());
        assert!(parse_args(["value-covering"]).is_ok());
    }
}
