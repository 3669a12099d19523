use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use torcrit::ampleness::{default_z_grid, scan_spectra};
use torcrit::config::{verify_dir, Config, OutputSink};
use torcrit::covariance::{kernel_jet_continuum, kernel_jet_lattice, write_kernel_csv};
use torcrit::critical::{find_critical_points, FinderSettings};
use torcrit::experiments::{blowup_bound_study, lln_trajectory, run_mc_stats, scaling_fit};
use torcrit::kac_rice::{
    blow_up_density, continuum_spectrum, one_point_density, two_point_density, v_m_const, write_two_point_csv,
};
use torcrit::rng::{derive_seed, trial_seed};
use torcrit::sampler::sample_field;
use torcrit::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "torcrit",
    version,
    about = "Critical points of random Fourier series on the flat torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root; results go to `<out>/<command>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Re-check the manifest and file hashes of a previous run instead of running.
    #[arg(long, global = true)]
    verify: bool,
    /// Comma-separated list of R values.
    #[arg(long = "R", global = true, value_delimiter = ',')]
    r: Option<Vec<f64>>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    r0: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Draw one sample and write its coefficients and grid values.
    Sample,
    /// Enumerate the critical points of one sample.
    Crit,
    /// Kernel derivative tables, lattice and continuum.
    Kernel,
    /// One-point Kac-Rice density.
    KrOne,
    /// Two-point densities over a separation grid.
    KrTwo,
    /// The constants C_m, Z_m and V_m.
    KrConsts,
    /// Nondegeneracy scan over R.
    Ample,
    /// Mean and variance of Z_R(f).
    Stats,
    /// Log-log fit of the variance against R.
    Scaling,
    /// LLN trajectories.
    Lln,
    /// Blow-up bound study.
    Blowup,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Crit => "crit",
            Command::Kernel => "kernel",
            Command::KrOne => "kr-one",
            Command::KrTwo => "kr-two",
            Command::KrConsts => "kr-consts",
            Command::Ample => "ample",
            Command::Stats => "stats",
            Command::Scaling => "scaling",
            Command::Lln => "lln",
            Command::Blowup => "blowup",
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.study.seed = s;
    }
    if let Some(r) = &cli.r {
        cfg.study.r = r.clone();
    }
    if let Some(m) = cli.m {
        cfg.field.m = m;
    }
    if let Some(t) = cli.trials {
        cfg.study.trials = t;
    }
    if let Some(r0) = cli.r0 {
        cfg.test_function.r0 = r0;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn first_r(cfg: &Config) -> Result<f64> {
    cfg.study
        .r
        .first()
        .copied()
        .ok_or_else(|| Error::Config("study.R is empty".into()))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let cmd = cli.command;
    let dir = PathBuf::from(&cfg.output.dir).join(cmd.name());
    if cli.verify {
        let manifest = verify_dir(&dir)?;
        println!(
            "verified {} files in {} (config {})",
            manifest.files.len(),
            dir.display(),
            manifest.config_hash
        );
        return Ok(());
    }
    let study = cfg.study_spec()?;
    let amp = &study.amplitude;
    let m = study.m;
    let seed = cfg.study.seed;
    let kr = &cfg.kac_rice;
    let mut sink = OutputSink::new(&dir, &cfg, cmd.name())?;
    println!(
        "{} | {amp}, m = {m}, seed = {seed}, config {}",
        cmd.name(),
        &sink.config_hash()[..12]
    );

    let summary = match cmd {
        Command::Sample | Command::Crit => {
            let r = first_r(&cfg)?;
            let spec = Arc::new(study.spectrum(r)?);
            let sample = sample_field(&spec, trial_seed(seed, r, 0, 0));
            let settings = FinderSettings::for_sample(&sample);
            if let Command::Sample = cmd {
                // Keep the grid under ~2M points.
                let cap = (2_000_000f64).powf(1.0 / m as f64) as usize;
                let n = settings.grid_n.min(cap);
                sink.csv("coefficients.csv", |w| sample.write_coefficients_csv(w))?;
                sink.csv("grid.csv", |w| sample.write_grid_csv(w, n))?;
                println!(
                    "R = {r}: {} modes, grid {n}^{m}, hash {}",
                    sample.terms().len(),
                    sample.coefficient_hash()
                );
                json!({ "R": r, "modes": sample.terms().len(), "grid_n": n, "coefficient_hash": sample.coefficient_hash() })
            } else {
                let measure = find_critical_points(&sample, &settings)?;
                sink.csv("critical_points.csv", |w| measure.write_csv(w))?;
                println!(
                    "R = {r}: {} critical points, index counts {:?}, euler {}, non-Morse {}",
                    measure.count(),
                    measure.index_counts(),
                    measure.euler_characteristic(),
                    measure.is_non_morse()
                );
                json!({
                    "R": r,
                    "count": measure.count(),
                    "index_counts": measure.index_counts(),
                    "euler": measure.euler_characteristic(),
                    "non_morse": measure.is_non_morse(),
                })
            }
        }
        Command::Kernel => {
            let r = first_r(&cfg)?;
            let spec = study.spectrum(r)?;
            let mut tables = Vec::new();
            for &d in std::iter::once(&0.0).chain(&kr.r_grid) {
                let mut z = vec![0.0; m];
                z[0] = d;
                tables.push(kernel_jet_lattice(&spec, &z)?);
                tables.push(kernel_jet_continuum(amp, m, &z)?);
            }
            sink.csv("kernel.csv", |w| write_kernel_csv(w, &tables))?;
            println!("R = {r}: {} kernel jets written", tables.len());
            json!({ "R": r, "jets": tables.len() })
        }
        Command::KrOne => {
            let cont = one_point_density(&continuum_spectrum(amp, m, 0.0)?, kr.n_mc_one, derive_seed(&[seed, 1]))?;
            let mut rows = vec![("continuum".to_string(), f64::INFINITY, cont.clone())];
            for &r in &cfg.study.r {
                let d = one_point_density(&study.spectrum(r)?, kr.n_mc_one, derive_seed(&[seed, 1]))?;
                rows.push(("lattice".into(), r, d));
            }
            sink.csv("kr_one.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["source", "R", "value", "std_error", "mc_samples"])?;
                for (src, r, d) in &rows {
                    c.write_record(&[
                        src.clone(),
                        format!("{r}"),
                        format!("{:.17e}", d.value),
                        format!("{:.6e}", d.std_error),
                        d.mc_samples.to_string(),
                    ])?;
                }
                c.flush()?;
                Ok(())
            })?;
            for (src, r, d) in &rows {
                println!("{src:>9} R = {r:<6} rho = {:.6} ± {:.6}", d.value, d.std_error);
            }
            json!({ "C_m": cont.value, "C_m_se": cont.std_error })
        }
        Command::KrTwo => {
            let reach = kr.r_grid.iter().cloned().fold(0.0, f64::max);
            let spec = continuum_spectrum(amp, m, reach)?;
            let mut nu = vec![0.0; m];
            nu[0] = 1.0;
            let mut rows = Vec::new();
            let mut ws = Vec::new();
            for (i, &d) in kr.r_grid.iter().enumerate() {
                let mut z = vec![0.0; m];
                z[0] = d;
                let s = derive_seed(&[seed, 2, i as u64]);
                let t = two_point_density(&spec, &z, kr.n_mc_two, s)?;
                let w = blow_up_density(&spec, d, &nu, kr.n_mc_two, s)?;
                println!(
                    "r = {d:<6} rho_hat = {:.6e} ± {:.1e}  rho_tilde = {:.6e}  delta = {:.3e} ± {:.1e}  w = {:.6e}",
                    t.rho_hat.value,
                    t.rho_hat.std_error,
                    t.rho_tilde.value,
                    t.delta.value,
                    t.delta.std_error,
                    w.w.value
                );
                ws.push(json!({ "r": d, "w": w.w.value, "w_se": w.w.std_error }));
                rows.push(t);
            }
            sink.csv("kr_two.csv", |w| write_two_point_csv(w, &rows))?;
            json!({ "w": ws })
        }
        Command::KrConsts => {
            let v = v_m_const(amp, m, kr.n_mc_one, kr.n_mc_two, kr.quad_nodes, seed)?;
            sink.json("consts.json", &v)?;
            println!("C_{m} = {:.6} ± {:.6}", v.c.value, v.c.std_error);
            println!(
                "Z_{m} = {:.6} ± {:.6}  (r_max {:.2}, tail bound {:.1e})",
                v.z.z.value, v.z.z.std_error, v.z.r_max, v.z.tail_bound
            );
            println!("V_{m} = {:.6} ± {:.6}", v.v.value, v.v.std_error);
            json!({ "C_m": v.c.value, "Z_m": v.z.z.value, "V_m": v.v.value })
        }
        Command::Ample => {
            let mut reports = Vec::new();
            for &r in &cfg.study.r {
                let spec = study.spectrum(r)?;
                let zs = default_z_grid(amp, m, r)?;
                reports.extend(scan_spectra(std::slice::from_ref(&spec), &zs, 2)?.reports);
            }
            let scan = torcrit::ampleness::ScanReport { reports, r0: None };
            sink.csv("ample.csv", |w| scan.write_csv(w))?;
            let failing: Vec<f64> = cfg.study.r.iter().copied().filter(|&r| !scan.passes(r)).collect();
            for &r in &cfg.study.r {
                println!(
                    "R = {r:<6} worst min eig {:.3e} {}",
                    scan.worst(r).unwrap_or(f64::NAN),
                    if scan.passes(r) { "pass" } else { "FAIL" }
                );
            }
            sink.finish(json!({ "failing_R": failing }))?;
            if !failing.is_empty() {
                return Err(Error::AmplenessGate(format!("R = {failing:?}")));
            }
            return Ok(());
        }
        Command::Stats | Command::Scaling => {
            if matches!(cmd, Command::Scaling) && cfg.study.r.len() < 3 {
                return Err(Error::InvalidArgument("scaling fit needs at least 3 distinct R".into()));
            }
            let res = run_mc_stats(&study, &cfg.study.r)?;
            sink.csv(
                if let Command::Stats = cmd {
                    "stats.csv"
                } else {
                    "scaling.csv"
                },
                |w| res.write_csv(w),
            )?;
            for row in &res.rows {
                let (mu, mu_se) = row.scaled_mean(m);
                let (v, v_se) = row.scaled_variance(m);
                println!(
                    "R = {:<6} mean/R^m = {mu:.5} ± {mu_se:.5}  var/R^m = {v:.5} ± {v_se:.5}  excluded {}",
                    row.r, row.excluded
                );
            }
            if let Command::Stats = cmd {
                json!({ "rows": res.rows })
            } else {
                let fit = scaling_fit(&res.rows, m)?;
                let v = v_m_const(amp, m, kr.n_mc_one, kr.n_mc_two, kr.quad_nodes, derive_seed(&[seed, 3]))?;
                let target = (v.v.value * study.f.integral_sq(m)).ln();
                sink.json("fit.json", &json!({ "fit": fit, "V_m": v.v, "log_target": target }))?;
                println!(
                    "slope = {:.4} ± {:.4} (95% [{:.3}, {:.3}]), intercept = {:.4}, anchored = {:.4} ± {:.4}, log(V_m ∫f²) = {target:.4}",
                    fit.slope, fit.slope_se, fit.slope_ci.0, fit.slope_ci.1, fit.intercept, fit.anchored_intercept, fit.anchored_intercept_se
                );
                json!({ "slope": fit.slope, "intercept": fit.intercept, "anchored_intercept": fit.anchored_intercept, "log_target": target })
            }
        }
        Command::Lln => {
            let c = one_point_density(&continuum_spectrum(amp, m, 0.0)?, kr.n_mc_one, derive_seed(&[seed, 1]))?;
            let rep = lln_trajectory(amp, m, &cfg.lln.n, &study.f, cfg.lln.streams, seed, c.value)?;
            sink.csv("lln.csv", |w| rep.write_csv(w))?;
            sink.json("lln_bands.json", &rep.bands)?;
            if rep.l2_only {
                println!("m = 1: L² statement only");
            }
            println!("reference C_m ∫f = {:.6}", rep.reference);
            for b in &rep.bands {
                println!(
                    "N = {:<4} median {:.5} IQR [{:.5}, {:.5}] max dev {:.5} ({:.1}%)",
                    b.n,
                    b.median,
                    b.q25,
                    b.q75,
                    b.max_deviation,
                    100.0 * b.max_deviation / rep.reference
                );
            }
            json!({ "reference": rep.reference, "final_relative_deviation": rep.final_relative_deviation() })
        }
        Command::Blowup => {
            let reach = cfg.blowup.r_grid.iter().cloned().fold(1.0, f64::max);
            let spec = Arc::new(continuum_spectrum(amp, m, reach)?);
            let s = blowup_bound_study(&spec, &cfg.blowup.r_grid, cfg.blowup.trials, kr.n_mc_two, seed)?;
            sink.json("blowup.json", &s)?;
            for (r, w) in &s.w {
                println!("r = {r:<8} w = {:.6e} ± {:.1e}", w.value, w.std_error);
            }
            for (p, v, e) in &s.moments {
                println!("E[C_F^{p}] = {v:.4e} ± {e:.1e}");
            }
            println!("observed K = {:.4e}", s.k_observed);
            json!({ "k_observed": s.k_observed })
        }
    };
    sink.finish(summary)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
