//! Command implementations behind the `coeffid` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::assembly::{Observation, Source};
use crate::check::run_checks;
use crate::config::RunConfig;
use crate::driver::{Admm, IterRecord, Reference};
use crate::error::{Error, Result};
use crate::io;
use crate::mesh::{build_uniform_mesh, Mesh};
use crate::problems::{generate_observation, noise_floor};
use crate::psolver::{nodal_tv, PSolver};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "coeffid",
    version,
    about = "Diffusion coefficient identification by ADMM"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate data, run ADMM and write history, summary, grid and timing files.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the derivative, factorization and prox self-checks.
    Check {
        #[arg(short, long)]
        config: PathBuf,
        /// Perturb the analytic gradient (negative control).
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Run a mesh × noise matrix and write one summary row per cell.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Send one noisy coefficient image through the configured denoiser.
    DenoiseTest {
        #[arg(short, long)]
        config: PathBuf,
    },
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run { config } => with_config(&config, cmd_run),
        Command::Check {
            config,
            corrupt_gradient,
        } => with_config(&config, |mut cfg| {
            cfg.check.corrupt_gradient |= corrupt_gradient;
            cmd_check(&cfg)
        }),
        Command::Sweep { config } => with_config(&config, cmd_sweep),
        Command::DenoiseTest { config } => with_config(&config, cmd_denoise_test),
    }
}

fn with_config(path: &Path, f: impl FnOnce(RunConfig) -> i32) -> i32 {
    match RunConfig::load(path) {
        Ok(cfg) => f(cfg),
        Err(e) => {
            eprintln!("coeffid: {e}");
            EXIT_CONFIG
        }
    }
}

/// Generated problem data shared by `run` and `sweep`.
pub struct ProblemData {
    pub mesh: Mesh,
    pub q_true: Vec<f64>,
    pub u_clean: Vec<f64>,
    pub clean: Observation,
    pub obs: Observation,
}

pub fn generate(cfg: &RunConfig, n: usize, delta: f64) -> Result<ProblemData> {
    let mesh = build_uniform_mesh(n)?;
    let spec = crate::problems::ProblemSpec {
        n,
        delta,
        ..cfg.problem.clone()
    };
    let q_true = spec.q_true(&mesh)?;
    let f = cfg.problem.f_const;
    let (clean, u_clean) = generate_observation(&mesh, &q_true, f, 0.0, spec.seed, &cfg.lin_state)?;
    let obs = if delta > 0.0 {
        generate_observation(&mesh, &q_true, f, delta, spec.seed, &cfg.lin_state)?.0
    } else {
        clean.clone()
    };
    Ok(ProblemData {
        mesh,
        q_true,
        u_clean,
        clean,
        obs,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

pub fn history_csv(history: &[IterRecord]) -> String {
    let mut out = String::from("iter,rel_error,grad_misfit,newton_steps,pcg_state,pcg_H,wall_ms\n");
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.3}",
            r.iter,
            opt(r.rel_error),
            opt(r.grad_misfit),
            r.newton_steps,
            r.pcg_state,
            r.pcg_h,
            r.wall_ms
        )
        .expect("writing to a string");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub delta: f64,
    pub h: f64,
    pub total_newton: usize,
    pub total_pcg_state: usize,
    pub total_pcg_h: usize,
    pub cpu_s: f64,
    pub rel_error: Option<f64>,
}

impl Summary {
    pub fn from_history(delta: f64, h: f64, cpu_s: f64, history: &[IterRecord]) -> Self {
        Self {
            delta,
            h,
            total_newton: history.iter().map(|r| r.newton_steps).sum(),
            total_pcg_state: history.iter().map(|r| r.pcg_state).sum(),
            total_pcg_h: history.iter().map(|r| r.pcg_h).sum(),
            cpu_s,
            rel_error: history.last().and_then(|r| r.rel_error),
        }
    }

    pub const HEADER: &'static str =
        "delta,h,total_newton,total_pcg_state,total_pcg_H,cpu_s,rel_error_50";

    pub fn row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{}",
            self.delta,
            self.h,
            self.total_newton,
            self.total_pcg_state,
            self.total_pcg_h,
            self.cpu_s,
            opt(self.rel_error)
        )
    }
}

fn write_outputs(dir: &Path, admm: &Admm<'_>, delta: f64, mesh: &Mesh) -> Result<Summary> {
    let hist = &admm.state.history;
    fs::write(dir.join("history.csv"), history_csv(hist))?;
    let summary = Summary::from_history(delta, mesh.h(), admm.solve_time().as_secs_f64(), hist);
    fs::write(
        dir.join("summary.csv"),
        format!("{}\n{}\n", Summary::HEADER, summary.row()),
    )?;
    io::write_grid(&dir.join("q_final.grid"), mesh.n(), &admm.state.q)?;
    fs::write(
        dir.join("timing.csv"),
        admm.timings().to_csv(admm.solve_time()),
    )?;
    Ok(summary)
}

pub fn cmd_run(cfg: RunConfig) -> i32 {
    let dir = &cfg.output.dir;
    if let Err(e) = fs::create_dir_all(dir) {
        eprintln!("coeffid: cannot create {}: {e}", dir.display());
        return EXIT_CONFIG;
    }
    let _ = fs::remove_file(dir.join("FAILED"));
    let fail = |e: &Error| {
        eprintln!("coeffid: FAILED: {e}");
        let _ = fs::write(dir.join("FAILED"), format!("{e}\n"));
        EXIT_SOLVER
    };

    let data = match generate(&cfg, cfg.problem.n, cfg.problem.delta) {
        Ok(d) => d,
        Err(e) => return fail(&e),
    };
    if cfg.output.write_observation {
        let obs_path = dir.join("observation.txt");
        let written = io::write_observation(
            &obs_path,
            &io::ObservationFile {
                n: data.mesh.n(),
                delta: cfg.problem.delta,
                seed: cfg.problem.seed,
                grads: data.obs.grads.clone(),
            },
        )
        .and_then(|_| {
            io::write_nodal(
                &io::nodal_path(&obs_path),
                data.mesh.n(),
                &data.mesh.extend_interior(&data.u_clean),
                &data.q_true,
            )
        });
        if let Err(e) = written {
            return fail(&e);
        }
    }

    let reference = Reference {
        q_true: Some(data.q_true.clone()),
        clean_grads: Some(data.clean.grads.clone()),
    };
    let mut admm = match Admm::new(
        &data.mesh,
        data.obs.clone(),
        &Source::Constant(cfg.problem.f_const),
        cfg.admm_config(),
        reference,
    ) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let result = admm.run();
    let floor = noise_floor(&data.mesh, &data.clean.grads, cfg.problem.delta);
    let written = write_outputs(dir, &admm, cfg.problem.delta, &data.mesh).and_then(|s| {
        let delta = cfg.problem.delta;
        fs::write(
            dir.join("noise_floor.csv"),
            format!("delta,grad_misfit_floor\n{delta},{floor:.10e}\n"),
        )?;
        Ok(s)
    });
    match (result, written) {
        (Err(e), _) => fail(&e),
        (Ok(()), Err(e)) => fail(&e),
        (Ok(()), Ok(s)) => {
            println!("{}", Summary::HEADER);
            println!("{}", s.row());
            EXIT_OK
        }
    }
}

pub fn cmd_check(cfg: &RunConfig) -> i32 {
    match run_checks(&cfg.check) {
        Ok(outcomes) => {
            let mut ok = true;
            for c in &outcomes {
                ok &= c.passed();
                println!(
                    "{} {:<22} measured={:.3e} tol={:.1e}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance
                );
            }
            if ok {
                EXIT_OK
            } else {
                EXIT_CHECK
            }
        }
        Err(e) => {
            eprintln!("coeffid: check aborted: {e}");
            EXIT_CHECK
        }
    }
}

pub const SWEEP_HEADER: &str =
    "n,delta,h,total_newton,total_pcg_state,total_pcg_H,cpu_s,rel_error_50,status";

fn sweep_cell(cfg: &RunConfig, n: usize, delta: f64) -> Result<Summary> {
    let data = generate(cfg, n, delta)?;
    let reference = Reference {
        q_true: Some(data.q_true.clone()),
        clean_grads: Some(data.clean.grads.clone()),
    };
    let mut admm = Admm::new(
        &data.mesh,
        data.obs,
        &Source::Constant(cfg.problem.f_const),
        cfg.admm_config(),
        reference,
    )?;
    admm.run()?;
    Ok(Summary::from_history(
        delta,
        data.mesh.h(),
        admm.solve_time().as_secs_f64(),
        &admm.state.history,
    ))
}

pub fn cmd_sweep(cfg: RunConfig) -> i32 {
    if let Err(e) = fs::create_dir_all(&cfg.output.dir) {
        eprintln!("coeffid: cannot create {}: {e}", cfg.output.dir.display());
        return EXIT_CONFIG;
    }
    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut failures = 0;
    for &n in &cfg.sweep.ns {
        for &delta in &cfg.sweep.deltas {
            let line = match sweep_cell(&cfg, n, delta) {
                Ok(s) => format!("{n},{},ok", s.row()),
                Err(e) => {
                    failures += 1;
                    eprintln!("coeffid: sweep cell n={n} delta={delta} failed: {e}");
                    format!("{n},{delta},{},,,,,,failed", 1.0 / n as f64)
                }
            };
            println!("{line}");
            csv.push_str(&line);
            csv.push('\n');
        }
    }
    if let Err(e) = fs::write(cfg.output.dir.join(&cfg.sweep.file), csv) {
        eprintln!("coeffid: {e}");
        return EXIT_SOLVER;
    }
    if failures > 0 {
        EXIT_SOLVER
    } else {
        EXIT_OK
    }
}

pub fn cmd_denoise_test(cfg: RunConfig) -> i32 {
    let run = || -> Result<()> {
        let mesh = build_uniform_mesh(cfg.problem.n)?;
        let truth = cfg.problem.q_true(&mesh)?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.problem.seed);
        let noisy: Vec<f64> = truth
            .iter()
            .map(|v| v + 0.1 * rng.random_range(-1.0..=1.0))
            .collect();
        let mut p = PSolver::new(cfg.denoiser.clone(), cfg.bounds)?;
        let out = p.solve(&noisy, &vec![0.0; noisy.len()], cfg.admm.beta)?;
        fs::create_dir_all(&cfg.output.dir)?;
        io::write_grid(&cfg.output.dir.join("denoise_in.grid"), mesh.n(), &noisy)?;
        io::write_grid(&cfg.output.dir.join("denoise_out.grid"), mesh.n(), &out)?;
        let rms = |a: &[f64]| {
            (a.iter()
                .zip(&truth)
                .map(|(x, t)| (x - t).powi(2))
                .sum::<f64>()
                / a.len() as f64)
                .sqrt()
        };
        println!("grid {0}x{0}", mesh.n() + 1);
        println!(
            "tv_in={:.6e} tv_out={:.6e}",
            nodal_tv(&noisy)?,
            nodal_tv(&out)?
        );
        println!(
            "rms_err_in={:.6e} rms_err_out={:.6e}",
            rms(&noisy),
            rms(&out)
        );
        Ok(())
    };
    match run() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("coeffid: FAILED: {e}");
            EXIT_SOLVER
        }
    }
}
