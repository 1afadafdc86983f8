//! Experiment driver: run single scenarios, parameter sweeps, or evaluate the
//! closed-form performance models, writing CSV/JSON artifacts for analysis.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use bbp_core::analytics::{
    fork_probability, reduce_trace, tps, AnalyticParams, MetricsReport,
};
use bbp_core::netsim::{run_scenario, Scenario};
use bbp_core::protocols::ProtocolKind;

#[derive(Parser)]
#[command(name = "bbp", version, about = "Block propagation protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and report.
    Run(RunArgs),
    /// Run a cross-product of scenarios in parallel.
    Sweep(SweepArgs),
    /// Evaluate the closed-form latency/throughput/fork models.
    Model(ModelArgs),
    /// Parse and validate a scenario file, printing the effective config.
    ValidateConfig(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary printout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep JSON: a base scenario plus axis lists.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Protocol: bbp, lbp, bhp or cbp; all four when omitted (missing
    /// fractions default to 0 in that mode).
    #[arg(long)]
    protocol: Option<String>,
    /// Transactions per block.
    #[arg(long, default_value_t = 200.0)]
    n_t: f64,
    /// Un-executable transactions per block.
    #[arg(long, default_value_t = 0.0)]
    n_u: f64,
    /// Hops to the 90th-percentile node.
    #[arg(long, default_value_t = 4.0)]
    hops: f64,
    /// Mean one-way link latency, ms.
    #[arg(long, default_value_t = 50.0)]
    t_c_ms: f64,
    #[arg(long, default_value_t = 55.0)]
    bandwidth_mbps: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Expected transactions per missing-transaction round trip.
    #[arg(long, default_value_t = 0.0)]
    missed_txs: f64,
    /// Mean block interval, seconds.
    #[arg(long, default_value_t = 15.0)]
    block_interval_s: f64,
    /// Evaluate the fork probability at this propagation delay instead of
    /// each protocol's modeled latency.
    #[arg(long)]
    t_l_ms: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepSpec {
    base: Scenario,
    protocols: Vec<ProtocolKind>,
    seeds: Vec<u64>,
    txs_per_block: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> SweepSpec {
        SweepSpec {
            base: Scenario::default(),
            protocols: vec![ProtocolKind::Bbp],
            seeds: vec![1],
            txs_per_block: Vec::new(),
        }
    }
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario> {
    let sc: Scenario = match path {
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&raw)
                .with_context(|| format!("cannot parse config {}", p.display()))?
        }
        None => Scenario::default(),
    };
    sc.validate().map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
    Ok(sc)
}

fn execute(sc: &Scenario, out: &Path, quiet: bool) -> Result<MetricsReport> {
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("effective_config.json"),
        serde_json::to_string_pretty(sc)?,
    )?;
    let trace = run_scenario(sc);
    trace.write_csvs(out)?;
    let report = reduce_trace(&trace, sc.protocol, sc.n_nodes);
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    if !quiet {
        println!(
            "{}: {} blocks ({} stale), p90 latency {:.1} ms, tps {:.2}, artifacts in {}",
            report.protocol,
            report.blocks_mined,
            report.stale_blocks,
            report.p90_latency_ms,
            report.tps_observed,
            out.display()
        );
    }
    Ok(report)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut sc = load_scenario(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    execute(&sc, &args.out, args.quiet)?;
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let spec: SweepSpec = serde_json::from_str(&raw)
        .with_context(|| format!("cannot parse config {}", args.config.display()))?;
    spec.base
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid base config: {e}"))?;
    let mut cells: Vec<Scenario> = Vec::new();
    let txs_axis = if spec.txs_per_block.is_empty() {
        vec![spec.base.txs_per_block]
    } else {
        spec.txs_per_block.clone()
    };
    for &proto in &spec.protocols {
        for &seed in &spec.seeds {
            for &n_t in &txs_axis {
                let mut sc = spec.base.clone();
                sc.protocol = proto;
                sc.seed = seed;
                sc.txs_per_block = n_t;
                sc.name = format!("{}-s{}-t{}", proto.as_str(), seed, n_t);
                sc.validate().map_err(|e| anyhow::anyhow!("invalid cell: {e}"))?;
                cells.push(sc);
            }
        }
    }
    std::fs::create_dir_all(&args.out)?;
    let quiet = args.quiet;
    let out = args.out.clone();
    let reports: Vec<Result<(Scenario, MetricsReport)>> = cells
        .par_iter()
        .map(|sc| {
            let dir = out.join(&sc.name);
            let r = execute(sc, &dir, quiet)?;
            Ok((sc.clone(), r))
        })
        .collect();
    let mut summary = String::from(
        "protocol,n_t,seed,p90_ms,p90_model_ms,bytes_per_block,sync_fail_frac,beta,gamma,stale_tx,stale_block_rate\n",
    );
    let frac = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (sc, r) in reports.into_iter().collect::<Result<Vec<_>>>()? {
        let model = model_prediction_ms(&sc, &r);
        let bytes_per_block = if r.blocks_mined > 0 {
            r.block_prop_bytes as f64 / r.blocks_mined as f64
        } else {
            0.0
        };
        summary.push_str(&format!(
            "{},{},{},{:.3},{},{:.1},{},{},{},{},{:.6}\n",
            r.protocol,
            sc.txs_per_block,
            sc.seed,
            r.p90_latency_ms,
            model.map(|m| format!("{m:.3}")).unwrap_or_default(),
            bytes_per_block,
            frac(r.sync_fraction.map(|s| 1.0 - s)),
            frac(r.beta),
            frac(r.gamma),
            r.stale_txs,
            r.fork_rate
        ));
    }
    std::fs::write(out.join("report.csv"), summary)?;
    if !quiet {
        println!("sweep complete: {}", out.join("report.csv").display());
    }
    Ok(())
}

/// Plugs measured quantities (hops, link latency, fractions, block fill) back
/// into the closed-form latency model of the cell's protocol.
fn model_prediction_ms(sc: &Scenario, r: &MetricsReport) -> Option<f64> {
    let mut p = AnalyticParams::new(
        r.mean_txs_per_block,
        r.p90_hops,
        r.mean_link_latency_ms,
        sc.bandwidth_mbps * 1_000_000.0,
    );
    p.sizes = sc.sizes;
    p.cost = sc.cost;
    p.n_u = sc.coinbase_tx_fraction * r.mean_txs_per_block;
    p.t1_ms = sc.bhp_t1_ms as f64;
    p.t2_ms = sc.bhp_t2_ms as f64;
    p.gamma = r.gamma;
    p.alpha = r.alpha;
    p.beta = r.beta;
    p.missed_txs = sc.late_tx_fraction * r.mean_txs_per_block;
    p.latency_ms(sc.protocol).ok()
}

fn parse_protocol(name: &str) -> Result<ProtocolKind> {
    match name {
        "bbp" => Ok(ProtocolKind::Bbp),
        "lbp" => Ok(ProtocolKind::Lbp),
        "bhp" => Ok(ProtocolKind::Bhp),
        "cbp" => Ok(ProtocolKind::Cbp),
        other => anyhow::bail!("unknown protocol {other:?} (expected bbp|lbp|bhp|cbp)"),
    }
}

fn cmd_model(args: &ModelArgs) -> Result<()> {
    for (name, v) in [("gamma", args.gamma), ("alpha", args.alpha), ("beta", args.beta)] {
        if let Some(v) = v {
            if !(0.0..=1.0).contains(&v) {
                anyhow::bail!("invalid config: {name} must be within [0, 1]");
            }
        }
    }
    let mut p = AnalyticParams::new(
        args.n_t,
        args.hops,
        args.t_c_ms,
        args.bandwidth_mbps * 1_000_000.0,
    );
    p.n_u = args.n_u;
    p.gamma = args.gamma;
    p.alpha = args.alpha;
    p.beta = args.beta;
    p.missed_txs = args.missed_txs;
    let tps_v = tps(args.n_t, args.block_interval_s);
    let kinds: Vec<ProtocolKind> = match &args.protocol {
        Some(name) => vec![parse_protocol(name)?],
        None => {
            // Grid mode: evaluate every protocol, absent fractions read as 0.
            p.gamma = Some(args.gamma.unwrap_or(0.0));
            p.alpha = Some(args.alpha.unwrap_or(0.0));
            p.beta = Some(args.beta.unwrap_or(0.0));
            vec![
                ProtocolKind::Bbp,
                ProtocolKind::Lbp,
                ProtocolKind::Bhp,
                ProtocolKind::Cbp,
            ]
        }
    };
    let mut rows = Vec::new();
    for kind in kinds {
        let latency_ms = p.latency_ms(kind)?;
        let t_l_ms = args.t_l_ms.unwrap_or(latency_ms);
        rows.push(serde_json::json!({
            "protocol": kind.as_str(),
            "latency_ms": latency_ms,
            "tps": tps_v,
            "fork_probability": fork_probability(t_l_ms / 1000.0, args.block_interval_s),
        }));
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::Value::Array(rows))?);
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let sc = load_scenario(Some(&args.config))?;
    println!("{}", serde_json::to_string_pretty(&sc)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Model(args) => cmd_model(args),
        Command::ValidateConfig(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Configuration problems exit 1, runtime failures exit 2.
            let msg = format!("{e:#}");
            if msg.contains("config") || msg.contains("unknown protocol") {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
