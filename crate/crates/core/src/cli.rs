//! Command-line front end: subcommands for each pipeline stage, writing CSV
//! and JSON artifacts into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::boundary_ops::gram_record;
use crate::config::{Experiment, ExperimentConfig};
use crate::constitutive::{default_grid, export_constitutive_curves};
use crate::error::{Error, Result};
use crate::forward::Conductor;
use crate::imaging::{mpm_reconstruct, synthesize_measurements, ContrastPair, Verdict};
use crate::verify::run_full_suite;

#[derive(Debug, Parser)]
#[command(name = "monotone-eit", version, about = "Nonlinear EIT forward solver, Average DtN and monotonicity imaging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Restrict `verify` to one check id.
    #[arg(long, global = true)]
    pub only: Option<String>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Record wall-clock seconds per check in the verification report.
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the forward problem for every excitation.
    Forward,
    /// DtN pairings between all excitations.
    Dtn,
    /// DtN and Average DtN pairings with quadrature reports.
    Avgdtn,
    /// Monotonicity-based inclusion reconstruction on a test-disk lattice.
    Reconstruct,
    /// Run the verification suite.
    Verify,
    /// Tabulate a constitutive law and its growth envelopes.
    Curves,
    /// Write the configured mesh in text format.
    MeshGen,
}

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Artifacts were written but some solves or checks failed.
    Failed,
}

/// Exit code for an error: 2 for invalid input, 1 otherwise.
pub fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Config(_) | Error::Parse { .. } | Error::Domain(_) | Error::Structural(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let path = cli
        .common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut config = ExperimentConfig::read(path)?;
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        config.output_dir = out.clone();
    }
    if cli.common.only.is_some() && cli.command != Command::Verify {
        return Err(Error::Config("--only applies to the verify command".into()));
    }
    let experiment = config.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let out = experiment.config.output_dir.clone();
    fs::create_dir_all(&out)?;
    pool.install(|| match cli.command {
        Command::Forward => cmd_forward(&experiment, &out),
        Command::Dtn => cmd_gram(&experiment, &out, false),
        Command::Avgdtn => cmd_gram(&experiment, &out, true),
        Command::Reconstruct => cmd_reconstruct(&experiment, &out),
        Command::Verify => cmd_verify(&experiment, &out, cli.common.only.as_deref(), cli.common.timings),
        Command::Curves => cmd_curves(&experiment, &out),
        Command::MeshGen => cmd_mesh_gen(&experiment, &out),
    })
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn header(exp: &Experiment) -> String {
    format!("# config_digest={}\n", exp.digest)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("json serializes") + "\n"))
}

fn conductor(exp: &Experiment) -> Result<Conductor<'_>> {
    Conductor::new(&exp.mesh, exp.assignment.clone(), &exp.models)
}

fn cmd_forward(exp: &Experiment, out: &Path) -> Result<Outcome> {
    let c = conductor(exp)?;
    let solver = &exp.config.solver;
    let results: Vec<_> = exp.excitations.par_iter().map(|f| c.solve(f, None, solver)).collect();
    let mut reports = Vec::new();
    let mut outcome = Outcome::Success;
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok((u, report)) => {
                let mut csv = header(exp);
                csv.push_str("node,x,y,u\n");
                for (k, (p, v)) in exp.mesh.nodes().iter().zip(&u.values).enumerate() {
                    writeln!(csv, "{k},{},{},{}", num(p[0]), num(p[1]), num(*v)).unwrap();
                }
                write(&out.join(format!("potential_{i}.csv")), &csv)?;
                reports.push(json!({ "excitation": i, "ok": true, "report": report }));
            }
            Err(e) => {
                eprintln!("excitation {i}: {e}");
                outcome = Outcome::Failed;
                reports.push(json!({ "excitation": i, "ok": false, "error": e.to_string() }));
            }
        }
    }
    write_json(&out.join("forward_report.json"), &json!({ "config_digest": exp.digest, "solves": reports }))?;
    Ok(outcome)
}

fn cmd_gram(exp: &Experiment, out: &Path, average: bool) -> Result<Outcome> {
    let c = conductor(exp)?;
    let q = &exp.config.quadrature;
    let table = gram_record(&c, &exp.excitations, average.then_some(q), &exp.config.solver)?;
    let mut csv = header(exp);
    csv.push_str("excitation_i,excitation_j,dtn_pairing,avg_dtn_power,quad_error\n");
    for e in &table.entries {
        writeln!(csv, "{},{},{},{},{}", e.i, e.j, opt(e.dtn_pairing), opt(e.avg_dtn_pairing), opt(e.quad_error)).unwrap();
    }
    write(&out.join("gram.csv"), &csv)?;
    for (i, reason) in &table.failures {
        eprintln!("excitation {i}: {reason}");
    }
    let failures: Vec<_> = table.failures.iter().map(|(i, r)| json!({ "excitation": i, "error": r })).collect();
    if average {
        write_json(
            &out.join("quadrature_report.json"),
            &json!({
                "config_digest": exp.digest,
                "options": q,
                "excitations": table.quadrature,
                "failures": failures,
            }),
        )?;
    }
    Ok(if table.failures.is_empty() { Outcome::Success } else { Outcome::Failed })
}

fn cmd_reconstruct(exp: &Experiment, out: &Path) -> Result<Outcome> {
    let spec = exp
        .config
        .imaging
        .as_ref()
        .ok_or_else(|| Error::Config("reconstruct needs an [imaging] section".into()))?;
    let pair = ContrastPair::new(
        &exp.models,
        exp.model_index(&spec.background)?,
        exp.model_index(&spec.anomaly)?,
        spec.contrast,
    )?;
    let (q, solver) = (&exp.config.quadrature, &exp.config.solver);
    let truth = conductor(exp)?;
    let measurements = synthesize_measurements(&truth, &exp.excitations, spec.noise, exp.config.seed, q, solver)?;
    let map = mpm_reconstruct(&exp.mesh, &pair, &measurements, &spec.grid, spec.tau, q, solver)?;
    let mut csv = header(exp);
    csv.push_str("center_x,center_y,radius,verdict,worst_margin,worst_excitation\n");
    for e in &map.entries {
        let verdict = match e.verdict {
            Verdict::Compatible => "1",
            Verdict::Excluded => "0",
            Verdict::Unknown => "-1",
        };
        let worst = e.worst_excitation.map(|i| i.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{verdict},{},{worst}", num(e.center[0]), num(e.center[1]), num(e.radius), opt(e.worst_margin))
            .unwrap();
    }
    write(&out.join("indicator.csv"), &csv)?;
    let count = |v: Verdict| map.entries.iter().filter(|e| e.verdict == v).count();
    let shapes = spec.grid.shapes(&exp.mesh);
    let mut estimate = vec![false; exp.mesh.num_elements()];
    for i in map.compatible() {
        for e in shapes[i].element_set(&exp.mesh) {
            estimate[e] = true;
        }
    }
    let area: f64 = estimate.iter().zip(exp.mesh.element_areas()).filter(|(&s, _)| s).map(|(_, a)| a).sum();
    let unknown: Vec<_> = map
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.reason.as_ref().map(|r| json!({ "region": i, "error": r })))
        .collect();
    write_json(
        &out.join("reconstruct_summary.json"),
        &json!({
            "config_digest": exp.digest,
            "tau": spec.tau,
            "noise": spec.noise,
            "contrast": spec.contrast,
            "measured_powers": measurements.powers,
            "regions": map.entries.len(),
            "compatible": count(Verdict::Compatible),
            "excluded": count(Verdict::Excluded),
            "unknown": count(Verdict::Unknown),
            "compatible_regions": map.compatible(),
            "estimate_area": area,
            "failures": unknown,
        }),
    )?;
    Ok(if unknown.is_empty() { Outcome::Success } else { Outcome::Failed })
}

fn cmd_verify(exp: &Experiment, out: &Path, only: Option<&str>, timings: bool) -> Result<Outcome> {
    let report = run_full_suite(exp, only, timings)?;
    write(&out.join("verification_report.json"), &report.to_json())?;
    for c in &report.checks {
        eprintln!("{:<22} {:?}", c.id, c.status);
    }
    Ok(if report.all_pass() { Outcome::Success } else { Outcome::Failed })
}

fn cmd_curves(exp: &Experiment, out: &Path) -> Result<Outcome> {
    let spec = exp
        .config
        .curves
        .as_ref()
        .ok_or_else(|| Error::Config("curves needs a [curves] section".into()))?;
    let model = &exp.models[exp.model_index(&spec.model)?];
    let grid = spec.grid.clone().unwrap_or_else(|| {
        let mut g = vec![0.0];
        g.extend(default_grid(model.e0()));
        g
    });
    let rows = export_constitutive_curves(model, &grid)?;
    let mut csv = header(exp);
    csv.push_str("E,sigma,J,Q,sigma_lower,sigma_upper\n");
    for r in rows {
        writeln!(csv, "{},{},{},{},{},{}", num(r.e), num(r.sigma), num(r.j), num(r.q), num(r.sigma_lower), num(r.sigma_upper))
            .unwrap();
    }
    write(&out.join("curves.csv"), &csv)?;
    Ok(Outcome::Success)
}

fn cmd_mesh_gen(exp: &Experiment, out: &Path) -> Result<Outcome> {
    write(&out.join("mesh.txt"), &(header(exp) + &exp.mesh.to_text()))?;
    Ok(Outcome::Success)
}
