use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spherenet::engine::write_trace_csv;
use spherenet::experiment::{run_point, run_sweep, verify_appendix, ExperimentSpec, SweepResult};
use spherenet::tessellation::{deploy, deploy_and_tessellate, rho_for_n};
use spherenet::verify::{compute_bounds, n2, throughput_ceilings, SHORT_RUN_T, SHORT_RUN_W};
use spherenet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spherenet",
    version,
    about = "Packet-level capacity simulator for wireless networks on the sphere"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drop n uniform nodes and write them as JSON.
    Deploy(SpecArgs),
    /// Deploy, build the cell tessellation and certify it.
    Tessellate(SpecArgs),
    /// Run one grid point end to end.
    Simulate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Also write a per-transmission trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run the whole (n, seed) grid of a config.
    Sweep(SpecArgs),
    /// Run one grid point and print the lemma checks.
    Verify(SpecArgs),
    /// Print the SINR ceilings and throughput bounds for a schedule length.
    Bounds(BoundsArgs),
    /// Monte Carlo checks of the pair-distance law and the cap-area sandwich.
    Appendix {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        pairs: usize,
    },
}

/// Flags that mirror config keys. Anything else goes through `--set`.
#[derive(Args, Clone, Default)]
struct SpecArgs {
    /// TOML experiment spec.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any spec key, e.g. `--set engine.lambda=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Grid of node counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds per grid point.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    area_constant: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    attempts: Option<u32>,
    #[arg(long)]
    measure_slots: Option<u64>,
    /// `bernoulli` or `saturated`.
    #[arg(long)]
    traffic: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut sets = self.set.clone();
        if !self.n.is_empty() {
            let list: Vec<String> = self.n.iter().map(ToString::to_string).collect();
            sets.push(format!("n=[{}]", list.join(",")));
        }
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                sets.push(format!("{key}={v}"));
            }
        };
        push("base_seed", self.seed.map(|v| v.to_string()));
        push("seeds", self.seeds.map(|v| v.to_string()));
        push(
            "area_constant",
            self.area_constant.map(|v| format!("{v:?}")),
        );
        push("engine.lambda", self.lambda.map(|v| format!("{v:?}")));
        push("engine.attempts", self.attempts.map(|v| v.to_string()));
        push(
            "engine.measure_slots",
            self.measure_slots.map(|v| v.to_string()),
        );
        push(
            "engine.traffic",
            self.traffic.as_ref().map(|v| format!("{v:?}")),
        );
        push("workers", self.workers.map(|v| v.to_string()));
        push(
            "out",
            self.out
                .as_ref()
                .map(|v| format!("{:?}", v.display().to_string())),
        );
        ExperimentSpec::load(self.config.as_deref(), &sets)
    }
}

#[derive(Args)]
struct BoundsArgs {
    /// Schedule length K; c1 = K - 1.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = spherenet::verify::DEFAULT_EPS)]
    eps1: f64,
    #[arg(long, default_value_t = spherenet::verify::DEFAULT_EPS)]
    eps2: f64,
    /// Config supplying the link model and path-loss exponent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// With `--n`, also print the throughput ceilings.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    area_constant: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Constant of the conservative-regime ceilings.
    #[arg(long, default_value_t = 1.0)]
    gk_constant: f64,
}

fn first_point(spec: &ExperimentSpec) -> (usize, u64) {
    (spec.n[0], spec.base_seed)
}

fn emit_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn write_point(result: &SweepResult, spec: &ExperimentSpec, out: &Path) -> Result<()> {
    result.write(out, spec)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn execute(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Deploy(a) => {
            let spec = a.load()?;
            let (n, seed) = first_point(&spec);
            let dep = deploy(n, seed)?;
            std::fs::create_dir_all(&spec.out)?;
            let path = spec.out.join("deployment.json");
            std::fs::write(&path, serde_json::to_string_pretty(&dep)?)?;
            eprintln!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Tessellate(a) => {
            let spec = a.load()?;
            let (n, seed) = first_point(&spec);
            let rho = rho_for_n(n, spec.area_constant)?;
            let (dep, t, redraws) = deploy_and_tessellate(n, rho, seed, spec.empty_cell_policy)?;
            let cert = t.certify(&dep, spec.verify.certificate_probes, seed);
            std::fs::create_dir_all(&spec.out)?;
            t.save_json(&spec.out.join("tessellation.json"))?;
            emit_json(&serde_json::json!({
                "n": n,
                "seed": seed,
                "rho_n": rho,
                "cells": t.num_cells(),
                "redraws": redraws,
                "certificate": cert,
                "certificate_ok": cert.holds(),
            }))?;
            Ok(status(cert.holds()))
        }
        Command::Simulate { spec: a, trace } => {
            let mut spec = a.load()?;
            spec.engine.trace |= trace;
            let (n, seed) = first_point(&spec);
            let p = run_point(&spec, n, seed)?;
            let result = SweepResult::from(&p);
            write_point(&result, &spec, &spec.out)?;
            if spec.engine.trace {
                write_trace_csv(&spec.out.join("trace.csv"), &p.metrics.trace)?;
            }
            emit_json(&result.runs[0])?;
            Ok(status(result.ok()))
        }
        Command::Sweep(a) => {
            let spec = a.load()?;
            let result = run_sweep(&spec)?;
            write_point(&result, &spec, &spec.out)?;
            for f in &result.failures {
                eprintln!("point n={} seed={} failed: {}", f.n, f.seed, f.error);
            }
            for r in result.runs.iter().filter(|r| !r.hard_invariants_ok) {
                eprintln!("point n={} seed={} broke a hard invariant", r.n, r.seed);
            }
            let ok = result.runs.iter().filter(|r| r.hard_invariants_ok).count();
            eprintln!(
                "{ok} points ok, {} not",
                result.runs.len() + result.failures.len() - ok
            );
            Ok(ExitCode::from(result.exit_code() as u8))
        }
        Command::Verify(a) => {
            let mut spec = a.load()?;
            spec.verify.enabled = true;
            let (n, seed) = first_point(&spec);
            let p = run_point(&spec, n, seed)?;
            let report = p.report.as_ref().expect("verification enabled");
            let mut checks: Vec<&str> = report.rows.iter().map(|r| r.check.as_str()).collect();
            checks.dedup();
            for c in checks {
                let rows: Vec<_> = report.rows.iter().filter(|r| r.check == c).collect();
                let passed = rows.iter().filter(|r| r.pass).count();
                println!("{c:<32} {passed}/{} pass", rows.len());
            }
            if let Some(rate) = report.sinr_pass_rate {
                println!("{:<32} {rate:.4}", "sinr_pass_rate");
            }
            println!(
                "{:<32} {}",
                "certificate",
                if p.certificate.holds() {
                    "ok"
                } else {
                    "FAILED"
                }
            );
            println!(
                "{:<32} {}",
                "conservation",
                if p.metrics.conservation_holds() {
                    "ok"
                } else {
                    "FAILED"
                }
            );
            println!(
                "{:<32} {:.6}",
                format!("n2(w={SHORT_RUN_W}, t={SHORT_RUN_T})"),
                n2(SHORT_RUN_W, SHORT_RUN_T)
            );
            let out = &spec.out;
            std::fs::create_dir_all(out)?;
            report.write_csv(&out.join("verification.csv"))?;
            Ok(status(p.run_row().hard_invariants_ok))
        }
        Command::Bounds(b) => {
            if b.k == 0 {
                return Err(Error::Config("schedule length must be at least 1".into()));
            }
            let spec = ExperimentSpec::load(b.config.as_deref(), &b.set)?;
            let bounds = compute_bounds(
                b.eps1,
                b.eps2,
                spec.radio.alpha,
                (b.k - 1) as f64,
                &spec.link,
            )?;
            let ceilings = match b.n {
                Some(n) => {
                    let rho = rho_for_n(n, b.area_constant)?;
                    // phi(beta0) rounds to 1 for most link models; report why instead of failing
                    match throughput_ceilings(
                        rho,
                        b.k,
                        b.lambda,
                        bounds.phi_beta0,
                        n,
                        b.gk_constant,
                    ) {
                        Ok(c) => serde_json::to_value(c)?,
                        Err(e) => serde_json::json!({ "unavailable": e.to_string() }),
                    }
                }
                None => serde_json::Value::Null,
            };
            emit_json(&serde_json::json!({ "bounds": bounds, "ceilings": ceilings }))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Appendix { seed, pairs } => {
            let report = verify_appendix(seed, pairs)?;
            for r in &report.rows {
                println!(
                    "{} {:<36} value={:.6} reference={:.6} tol={:.2e}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.check,
                    r.value,
                    r.reference,
                    r.tolerance
                );
            }
            Ok(status(report.passes()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
