//! Command-line runner: solves game configs, runs the verification suite and
//! the dense-oracle comparison, and writes machine-readable reports.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 solver non-convergence,
//! 3 verification failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use nashpde_core::adjoint;
use nashpde_core::game::{GameError, GameOperator, NashReport, OperatorMode, SolveOptions};
use nashpde_core::heat;
use nashpde_core::objectives::{self, Family};
use nashpde_core::oracle;
use nashpde_core::problem::{write_control_csv, ProblemSpec};

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 1;
const EXIT_NONCONVERGENCE: i32 = 2;
const EXIT_VERIFY: i32 = 3;

#[derive(Parser)]
#[command(name = "nashpde", version, about = "Nash equilibria of distributed-control games for the 1-D heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled optimality system and write the equilibrium
    Solve(RunArgs),
    /// Run gradient, adjoint, Nash and equivalence certifications
    Verify(RunArgs),
    /// Assemble the dense operator and compare against the iterative solve
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem config (JSON)
    config: PathBuf,
    /// Solver override; defaults to cg in symmetric mode, gmres otherwise
    #[arg(long, value_enum)]
    solver: Option<SolverChoice>,
    /// Relative residual tolerance
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    /// Seed for all randomized probes
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: available cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Evaluate the published functional displays instead of the derived ones
    #[arg(long)]
    paper_literal: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// How many (j,p) functional pairs to certify
    #[arg(long, default_value_t = 4)]
    max_pairs: usize,
    /// Verify the config hash against an existing manifest before running
    #[arg(long)]
    check_manifest: bool,
    /// Oracle only: dump the assembled matrix and right-hand side as CSV
    #[arg(long)]
    dump_dense: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverChoice {
    Cg,
    Gmres,
}

#[derive(Serialize)]
struct RunManifest {
    config_path: String,
    config_sha256: String,
    command: String,
    seed: u64,
    tool_version: String,
    outputs: Vec<String>,
    timings: ManifestTimings,
}

#[derive(Serialize)]
struct ManifestTimings {
    total_s: f64,
}

#[derive(Serialize)]
struct CheckResult {
    name: String,
    passed: bool,
    value: f64,
    threshold: f64,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            EXIT_CONFIG
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Oracle(args) => cmd_oracle(&args),
    }
}

fn setup(args: &RunArgs) -> Result<(ProblemSpec, String)> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let hash = sha256_file(&args.config)?;
    if args.check_manifest {
        check_manifest(&args.out, &hash)?;
    }
    let spec = ProblemSpec::load(&args.config)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;
    Ok((spec, hash))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn check_manifest(out_dir: &Path, config_hash: &str) -> Result<()> {
    let path = out_dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("--check-manifest: cannot read {}", path.display()))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("--check-manifest: malformed {}", path.display()))?;
    let recorded = manifest
        .get("config_sha256")
        .and_then(|v| v.as_str())
        .ok_or_else(|| anyhow!("--check-manifest: manifest has no config_sha256"))?;
    if recorded != config_hash {
        bail!(
            "--check-manifest: config hash mismatch (manifest {recorded}, file {config_hash})"
        );
    }
    println!("manifest check ok ({config_hash})");
    Ok(())
}

fn write_manifest(
    args: &RunArgs,
    command: &str,
    hash: &str,
    outputs: &[String],
    started: Instant,
) -> Result<()> {
    let mut all = outputs.to_vec();
    all.push("manifest.json".to_string());
    let manifest = RunManifest {
        config_path: args.config.display().to_string(),
        config_sha256: hash.to_string(),
        command: command.to_string(),
        seed: args.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: all,
        timings: ManifestTimings {
            total_s: started.elapsed().as_secs_f64(),
        },
    };
    write_json(&args.out.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn solve_options(args: &RunArgs) -> SolveOptions {
    SolveOptions {
        rtol: args.rtol,
        seed: args.seed,
        ..Default::default()
    }
}

fn run_solver(
    op: &GameOperator,
    args: &RunArgs,
) -> (bool, Result<NashReport, GameError>) {
    let use_cg = match args.solver {
        Some(SolverChoice::Cg) => true,
        Some(SolverChoice::Gmres) => false,
        None => op.mode() == OperatorMode::Symmetric,
    };
    let opts = solve_options(args);
    let result = if use_cg {
        op.solve_cg(&opts)
    } else {
        op.solve_gmres(&opts)
    };
    (use_cg, result)
}

fn cmd_solve(args: &RunArgs) -> Result<i32> {
    let started = Instant::now();
    let (spec, hash) = setup(args)?;
    let op = GameOperator::new(&spec);
    let (_, result) = run_solver(&op, args);

    match result {
        Ok(report) => {
            let mut outputs = vec!["report.json".to_string(), "state.csv".to_string()];
            write_json(&args.out.join("report.json"), &report)?;
            let state = heat::solve_state(&spec, &report.u);
            heat::write_state_csv(args.out.join("state.csv"), &spec.grid, &state.y)?;
            for i in 0..spec.player_count() {
                let name = format!("control_player{}.csv", i + 1);
                write_control_csv(args.out.join(&name), &spec, i, &report.u.slabs[i])?;
                outputs.push(name);
            }
            write_manifest(args, "solve", &hash, &outputs, started)?;
            println!(
                "solved ({} mode): {} iterations, relative residual {:.3e}",
                report.mode, report.iterations, report.residual
            );
            for (i, j) in report.j_values.iter().enumerate() {
                println!("  J_{} = {:.12e}", i + 1, j);
            }
            Ok(EXIT_OK)
        }
        Err(GameError::NonConvergence {
            iterations,
            residual,
            history,
        }) => {
            #[derive(Serialize)]
            struct FailureReport {
                mode: String,
                converged: bool,
                iterations: usize,
                residual: f64,
                seed: u64,
                residual_history: Vec<f64>,
            }
            let report = FailureReport {
                mode: op.mode().as_str().to_string(),
                converged: false,
                iterations,
                residual,
                seed: args.seed,
                residual_history: history,
            };
            write_json(&args.out.join("report.json"), &report)?;
            write_manifest(args, "solve", &hash, &["report.json".to_string()], started)?;
            eprintln!(
                "non-convergence: {iterations} iterations, relative residual {residual:.3e}"
            );
            Ok(EXIT_NONCONVERGENCE)
        }
        Err(other) => Err(other.into()),
    }
}

fn cmd_verify(args: &RunArgs) -> Result<i32> {
    let started = Instant::now();
    let (spec, hash) = setup(args)?;
    let op = GameOperator::new(&spec);
    let symmetric = op.mode() == OperatorMode::Symmetric;
    let alpha_min = spec
        .players
        .iter()
        .map(|p| p.alpha)
        .fold(f64::INFINITY, f64::min);

    let mut checks: Vec<CheckResult> = Vec::new();
    let push = |checks: &mut Vec<CheckResult>, name: String, passed: bool, value: f64, threshold: f64| {
        println!("{} {name}  (value {value:.3e}, threshold {threshold:.3e})",
            if passed { "PASS" } else { "FAIL" });
        checks.push(CheckResult { name, passed, value, threshold });
    };

    // Gradient exactness, every player.
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let probe_v = spec.random_bundle(&mut rng);
    for i in 0..spec.player_count() {
        let err = objectives::fd_gradient_check(&spec, i, &probe_v, 10, 1e-5, args.seed + 10 + i as u64);
        push(&mut checks, format!("gradient-fd-player{}", i + 1), err < 1e-6, err, 1e-6);
    }

    // Control-to-observation transpose.
    let defect = adjoint::adjoint_identity_defect(&spec, 5, args.seed + 20);
    push(&mut checks, "adjoint-identity".into(), defect < 1e-10, defect, 1e-10);

    if symmetric {
        let sym = op.symmetry_defect_probe(5, args.seed + 30);
        push(&mut checks, "operator-symmetry".into(), sym < 1e-10, sym, 1e-10);
        let probe = op.ellipticity_probe(8, args.seed + 40);
        push(
            &mut checks,
            "coercivity".into(),
            probe >= alpha_min - 1e-10,
            probe - alpha_min,
            -1e-10,
        );
    }

    // Solve, then certify the equilibrium.
    let (_, result) = run_solver(&op, args);
    let report = match result {
        Ok(report) => report,
        Err(GameError::NonConvergence { residual, .. }) => {
            push(&mut checks, "solve-convergence".into(), false, residual, args.rtol);
            return finish_verify(args, &hash, checks, symmetric, started);
        }
        Err(other) => return Err(other.into()),
    };
    push(
        &mut checks,
        "solve-convergence".into(),
        report.residual <= args.rtol,
        report.residual,
        args.rtol,
    );
    if let Some(&internal) = report.residual_history.last() {
        // Both numbers are A u - b in the U norm, relative to b: the fresh
        // recomputation must agree with the recurred CG residual to 1e-8.
        let gap = (report.residual - internal).abs();
        push(&mut checks, "residual-recomputation".into(), gap <= 1e-8, gap, 1e-8);
    }

    let worst = objectives::unilateral_check(&op, &report.u, 40, args.seed + 50);
    push(&mut checks, "unilateral-optimality".into(), worst >= -1e-12, worst, -1e-12);

    if symmetric {
        let mut families = vec![Family::Coop];
        let n = spec.player_count();
        'outer: for j in 0..n {
            for p in 0..n {
                if families.len() > args.max_pairs {
                    break 'outer;
                }
                families.push(Family::Jp { j, p });
            }
        }
        for (k, family) in families.into_iter().enumerate() {
            let cert = objectives::certify_equivalence(
                &op,
                family,
                20,
                args.seed + 60 + k as u64,
                args.paper_literal,
            )?;
            let bound = 1e-10 * (1.0 + cert.constant_mean.abs());
            push(
                &mut checks,
                format!("equivalence-{}-constant", cert.family),
                cert.constant_max_dev < bound,
                cert.constant_max_dev,
                bound,
            );
            push(
                &mut checks,
                format!("equivalence-{}-gradient", cert.family),
                cert.grad_fd_max_rel_err < 1e-6,
                cert.grad_fd_max_rel_err,
                1e-6,
            );
            if let Some(dist) = cert.argmin_rel_distance {
                push(
                    &mut checks,
                    format!("equivalence-{}-argmin", cert.family),
                    dist < 1e-8,
                    dist,
                    1e-8,
                );
            }
        }
    }

    finish_verify(args, &hash, checks, symmetric, started)
}

fn finish_verify(
    args: &RunArgs,
    hash: &str,
    checks: Vec<CheckResult>,
    symmetric: bool,
    started: Instant,
) -> Result<i32> {
    #[derive(Serialize)]
    struct VerifyReport {
        command: String,
        mode: String,
        seed: u64,
        paper_literal: bool,
        all_passed: bool,
        checks: Vec<CheckResult>,
    }
    let all_passed = checks.iter().all(|c| c.passed);
    let report = VerifyReport {
        command: "verify".into(),
        mode: if symmetric { "symmetric" } else { "general" }.into(),
        seed: args.seed,
        paper_literal: args.paper_literal,
        all_passed,
        checks,
    };
    write_json(&args.out.join("report.json"), &report)?;
    write_manifest(args, "verify", hash, &["report.json".to_string()], started)?;
    if all_passed {
        println!("all {} checks passed", report.checks.len());
        Ok(EXIT_OK)
    } else {
        let first = report.checks.iter().find(|c| !c.passed).unwrap();
        eprintln!("verification failed: {}", first.name);
        Ok(EXIT_VERIFY)
    }
}

fn cmd_oracle(args: &RunArgs) -> Result<i32> {
    let started = Instant::now();
    let (spec, hash) = setup(args)?;
    let op = GameOperator::new(&spec);

    let dense = match oracle::assemble_dense(&op, oracle::DEFAULT_DIMENSION_CAP) {
        Ok(dense) => dense,
        Err(oracle::OracleError::DimensionCap { dim, cap }) => {
            eprintln!("control dimension {dim} exceeds the dense-assembly cap {cap}");
            return Ok(EXIT_CONFIG);
        }
        Err(other) => return Err(other.into()),
    };
    let defect = oracle::symmetry_defect(&dense);
    let min_eig = oracle::min_eigen_sym(&dense);
    let alpha_min = spec
        .players
        .iter()
        .map(|p| p.alpha)
        .fold(f64::INFINITY, f64::min);

    // Matrix-free against dense on random bundles.
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut agreement: f64 = 0.0;
    for _ in 0..20 {
        let v = spec.random_bundle(&mut rng);
        let x = dense.index_map.to_vec(&v);
        let dense_out = dense.apply(&x);
        let free_out = dense.index_map.to_vec(&op.apply(&v));
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        let err = dense_out
            .iter()
            .zip(&free_out)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        agreement = agreement.max(err / norm);
    }

    let direct = match oracle::direct_solve(&dense, &spec) {
        Ok(direct) => direct,
        Err(oracle::OracleError::Singular { .. }) => {
            eprintln!("dense system is singular to tolerance: ellipticity failure");
            return Ok(EXIT_NONCONVERGENCE);
        }
        Err(other) => return Err(other.into()),
    };
    let (_, result) = run_solver(&op, args);
    let report = match result {
        Ok(report) => report,
        Err(GameError::NonConvergence { iterations, residual, .. }) => {
            eprintln!("iterative solver did not converge: {iterations} iterations, residual {residual:.3e}");
            return Ok(EXIT_NONCONVERGENCE);
        }
        Err(other) => return Err(other.into()),
    };
    let mut diff = direct.clone();
    diff.add_scaled(&report.u, -1.0);
    let norm_direct = spec.norm_u(&direct).max(1e-300);
    let direct_vs_iterative = spec.norm_u(&diff) / norm_direct;

    #[derive(Serialize)]
    struct OracleReport {
        command: String,
        mode: String,
        dim: usize,
        symmetry_defect: f64,
        min_eigen_sym: f64,
        alpha_min: f64,
        matrix_free_agreement: f64,
        direct_vs_iterative_rel: f64,
        iterations: usize,
        seed: u64,
    }
    let oracle_report = OracleReport {
        command: "oracle".into(),
        mode: op.mode().as_str().into(),
        dim: dense.dim,
        symmetry_defect: defect,
        min_eigen_sym: min_eig,
        alpha_min,
        matrix_free_agreement: agreement,
        direct_vs_iterative_rel: direct_vs_iterative,
        iterations: report.iterations,
        seed: args.seed,
    };
    write_json(&args.out.join("report.json"), &oracle_report)?;
    let mut outputs = vec!["report.json".to_string()];
    if args.dump_dense {
        oracle::write_dense_csv(&args.out, &dense)?;
        outputs.push("A.csv".to_string());
        outputs.push("b.csv".to_string());
    }
    write_manifest(args, "oracle", &hash, &outputs, started)?;
    println!(
        "oracle: dim {}, symmetry defect {defect:.3e}, min eigenvalue {min_eig:.6e}, direct-vs-iterative {direct_vs_iterative:.3e}",
        dense.dim
    );
    Ok(EXIT_OK)
}
