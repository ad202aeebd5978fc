//! The experiment subcommands. Each one resolves its parameters, writes its
//! CSVs plus the resolved configuration into the output directory, and prints
//! a short summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ntk_spectra::kernel_flow::{
    candidate_grid, cv_run, kernel_target, log_grid, optimal_stopping_time, risk_curve, synthetic_task,
    write_cv_runs, write_risk_curve, CvConfig, FlowPredictor, Predictor, Target, GRAM_TOLERANCE,
};
use ntk_spectra::loglog::fit_loglog;
use ntk_spectra::mirrored_network::{
    lazy_run, lazy_task, probe_grid, train, write_lazy_rows, LazyConfig, LazyRow, NetworkState, ProbeConfig,
    MAX_PROBES,
};
use ntk_spectra::ntk_kernels::{ntk_profile, NtkDescriptor};
use ntk_spectra::rng::{substream, substream_seed};
use ntk_spectra::spectral_estimator::{
    edr_cell, sample_with, write_edr_table, write_spectrum, DistributionKind, EdrConfig, SampleDistribution,
    TableDistribution,
};
use ntk_spectra::sphere_harmonics::{funk_hecke_modes, SphereGeometry};
use ntk_spectra::Error;

use crate::config::{key, Key, Params};
use crate::{pool, CliError};

pub const EDR_KEYS: &[Key] = &[
    key("dist", "all", "distributions: all or a list of ucube, ucube01, triangular, cnormal"),
    key("d", "3,4,5", "input dimensions"),
    key("L", "2,3,4", "hidden layers"),
    key("n", "1000", "samples per Gram matrix"),
    key("window_lo", "50", "first fitted eigenvalue index (1-based)"),
    key("window_hi", "200", "last fitted eigenvalue index (1-based)"),
    key("seeds", "3", "independent samples per cell"),
];

pub const SPHERE_KEYS: &[Key] = &[
    key("profile", "ntk", "ntk, constant or linear"),
    key("d", "3", "sphere dimension"),
    key("L", "2", "hidden layers of the ntk profile"),
    key("n_max", "80", "largest degree"),
    key("quad_order", "128", "quadrature nodes (checked against twice as many)"),
    key("fit_lo", "10", "first degree of the slope fit"),
    key("fit_hi", "60", "last degree of the slope fit"),
    key("trace_rel", "1e-4", "truncate the trace where mu_N a_N drops below this times f(1)"),
];

pub const FLOW_KEYS: &[Key] = &[
    key("d", "1", "input dimension"),
    key("L", "2", "hidden layers"),
    key("n", "256", "training samples"),
    key("n_holdout", "100", "holdout samples"),
    key("n_eval", "2001", "evaluation points for the L2 risk"),
    key("sigma", "0.3", "noise standard deviation"),
    key("s", "1", "smoothness used by the stopping schedule"),
    key("c", "10", "scale of the stopping schedule"),
    key("M", "", "truncation bound for the holdout risk (empty: none)"),
    key("times", "", "times to evaluate (empty: log grid around t_op)"),
];

pub const TRAIN_KEYS: &[Key] = &[
    key("d", "2", "input dimension"),
    key("L", "2", "hidden layers"),
    key("m", "512", "hidden width"),
    key("n", "5", "training samples"),
    key("eta", "0.05", "gradient-descent step size"),
    key("steps", "200", "gradient-descent steps"),
    key("log_every", "20", "steps between trace rows"),
];

pub const COMPARE_KEYS: &[Key] = &[
    key("d", "2", "input dimension"),
    key("L", "2", "hidden layers"),
    key("n", "5", "training samples"),
    key("eta", "0.05", "gradient-descent step size"),
    key("steps", "200", "gradient-descent steps"),
    key("log_every", "20", "steps between logged times"),
    key("widths", "256,1024,4096", "hidden widths to compare"),
    key("seeds", "5", "seeds per width"),
];

pub const CV_KEYS: &[Key] = &[
    key("L", "2", "hidden layers"),
    key("n_train", "200", "training samples"),
    key("n_holdout", "100", "holdout samples"),
    key("sigma", "0.3", "noise standard deviation"),
    key("M", "3", "truncation bound"),
    key("Q", "2", "ratio of the candidate grid"),
    key("delta", "0.1", "confidence parameter of the guarantee"),
    key("runs", "50", "independent runs"),
    key("n_eval", "2001", "evaluation points for the L2 risk"),
];

struct Output {
    dir: PathBuf,
    plot: bool,
}

impl Output {
    fn prepare(params: &Params) -> Result<Self, CliError> {
        let dir = PathBuf::from(params.str("out"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.txt"), params.render())?;
        Ok(Output { dir, plot: params.flag("plot_data")? })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn plot(&self, name: &str, points: impl IntoIterator<Item = (f64, f64)>) -> Result<(), CliError> {
        if !self.plot {
            return Ok(());
        }
        let mut w = self.create(name)?;
        writeln!(w, "x,y")?;
        for (x, y) in points {
            if x.is_finite() && y.is_finite() {
                writeln!(w, "{x:e},{y:e}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn loglog_points(xs: impl IntoIterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    xs.into_iter().filter(|&(x, y)| x > 0.0 && y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect()
}

pub fn edr(params: &Params) -> Result<(), CliError> {
    let distributions = match params.str("dist") {
        "all" => TableDistribution::ALL.to_vec(),
        raw => raw
            .split(',')
            .map(|s| s.trim().parse::<TableDistribution>().map_err(|e| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?,
    };
    let config = EdrConfig {
        distributions,
        dims: params.list("d")?,
        layers: params.list("L")?,
        n: params.get("n")?,
        window: (params.get("window_lo")?, params.get("window_hi")?),
        seeds: params.get("seeds")?,
        root_seed: params.get("seed")?,
    };
    if config.seeds == 0 {
        return Err(CliError::Usage("seeds must be positive".into()));
    }
    let out = Output::prepare(params)?;
    let mut grid = Vec::new();
    for &dist in &config.distributions {
        for &d in &config.dims {
            for &l in &config.layers {
                grid.push((dist, d, l));
            }
        }
    }
    let cells = pool::run(params.get("jobs")?, &grid, |&(dist, d, l)| edr_cell(&config, dist, d, l))?;
    let mut table = out.create("edr_table.csv")?;
    write_edr_table(&cells, &config, &mut table)?;
    table.flush()?;
    for cell in &cells {
        let mut w = out.create(&format!("spectrum_{}.csv", cell.label()))?;
        write_spectrum(&cell.mean_spectrum, &mut w)?;
        w.flush()?;
        out.plot(
            &format!("plot_{}.csv", cell.label()),
            loglog_points(cell.mean_spectrum.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v))),
        )?;
        println!("{:<28} r = {:.3} ± {:.3}   (d+1)/d = {:.3}", cell.label(), cell.r_mean(), cell.r_std(), cell.r_theory());
    }
    Ok(())
}

pub fn sphere_modes(params: &Params) -> Result<(), CliError> {
    let d: usize = params.get("d")?;
    let layers: usize = params.get("L")?;
    let geometry = SphereGeometry::new(d)?;
    let n_max: usize = params.get("n_max")?;
    let quad: usize = params.get("quad_order")?;
    let (fit_lo, fit_hi): (usize, usize) = (params.get("fit_lo")?, params.get("fit_hi")?);
    let profile: Box<dyn Fn(f64) -> f64> = match params.str("profile") {
        "ntk" => {
            let desc = NtkDescriptor::homogeneous(layers)?;
            Box::new(move |u| ntk_profile(&desc, u).unwrap_or(f64::NAN))
        }
        "constant" => Box::new(|_| 1.0),
        "linear" => Box::new(|u| u),
        other => return Err(CliError::Usage(format!("unknown profile `{other}` (expected ntk, constant or linear)"))),
    };
    let value_at_one = profile(1.0);
    let out = Output::prepare(params)?;
    let spectrum = funk_hecke_modes(&profile, &geometry, n_max, quad)?;
    let mut w = out.create("modes.csv")?;
    spectrum.write_csv(&mut w)?;
    w.flush()?;

    let fit_range = fit_lo.max(1)..=fit_hi.min(n_max);
    let fit = if !fit_range.is_empty() && fit_range.clone().all(|n| spectrum.mu[n] > 0.0) {
        Some(fit_loglog(fit_range.clone().map(|n| (n as f64, spectrum.mu[n]))))
    } else {
        None
    };
    let rel: f64 = params.get("trace_rel")?;
    let truncation = spectrum.truncation_degree(value_at_one, rel);
    let trace = spectrum.trace_through(truncation.unwrap_or(n_max));
    let mut w = out.create("mode_fit.csv")?;
    writeln!(w, "slope,intercept,r2,fit_lo,fit_hi,trace,value_at_one,truncation_degree")?;
    let (slope, intercept, r2) = fit.map_or((f64::NAN, f64::NAN, f64::NAN), |f| (f.slope, f.intercept, f.r2));
    let trunc = truncation.map_or(String::new(), |n| n.to_string());
    writeln!(w, "{slope:e},{intercept:e},{r2:e},{},{},{trace:e},{value_at_one:e},{trunc}", fit_range.start(), fit_range.end())?;
    w.flush()?;
    out.plot("plot_modes.csv", loglog_points(spectrum.mu.iter().enumerate().skip(1).map(|(n, &m)| (n as f64, m))))?;

    let nonzero = spectrum.mu.iter().filter(|m| m.abs() > 1e-12 * value_at_one.abs().max(1.0)).count();
    println!("{} modes computed, {} nonzero", n_max + 1, nonzero);
    match fit {
        Some(f) => println!("slope of ln mu_n over n in [{}, {}]: {:.3}", fit_range.start(), fit_range.end(), f.slope),
        None => println!("slope not fitted: some mu_n in the fit range are not positive"),
    }
    println!("trace through degree {}: {:.6} (f(1) = {:.6})", truncation.unwrap_or(n_max), trace, value_at_one);
    Ok(())
}

pub fn flow(params: &Params) -> Result<(), CliError> {
    let d: usize = params.get("d")?;
    let layers: usize = params.get("L")?;
    let n: usize = params.get("n")?;
    let seed: u64 = params.get("seed")?;
    let sigma: f64 = params.get("sigma")?;
    let bound: Option<f64> = params.optional("M")?;
    let t_op = optimal_stopping_time(n, d, params.get("s")?, params.get("c")?)?;
    let mut times: Vec<f64> = params.list("times")?;
    if times.is_empty() {
        times = log_grid(1e-2 * t_op, 1e6 * t_op, 33);
    }
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(CliError::Usage("times must be nonnegative".into()));
    }

    let target = kernel_target(d, layers, seed)?;
    let truth: Target = {
        let t = target.clone();
        std::sync::Arc::new(move |x: &[f64]| t.predict(x))
    };
    let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, d, seed);
    let mut rng = substream(seed, "flow/data", 0);
    let task = synthetic_task(truth.clone(), &dist, n, sigma, &mut rng)?;
    let n_holdout: usize = params.get("n_holdout")?;
    let holdout = if n_holdout > 0 {
        synthetic_task(truth.clone(), &dist, n_holdout, sigma, &mut rng)?
    } else {
        task.clone()
    };
    let n_eval: usize = params.get("n_eval")?;
    let eval: Vec<Vec<f64>> = if d == 1 {
        (0..n_eval).map(|i| vec![-1.0 + 2.0 * i as f64 / (n_eval.max(2) - 1) as f64]).collect()
    } else {
        sample_with(&dist, n_eval, &mut substream(seed, "flow/eval", 0))?
    };
    let out = Output::prepare(params)?;
    let flow = FlowPredictor::new_tolerant(target.kernel, &task, GRAM_TOLERANCE)?;
    let f = |x: &[f64]| truth(x);
    let curve = risk_curve(&flow, &times, (&holdout.x, &holdout.y), bound, Some((&f, &eval)))?;
    let mut w = out.create("risk_curve.csv")?;
    write_risk_curve(&curve, &mut w)?;
    w.flush()?;
    out.plot("plot_risk.csv", loglog_points(curve.iter().map(|p| (p.t, p.l2_risk))))?;

    let at_op = risk_curve(&flow, &[t_op], (&holdout.x, &holdout.y), bound, Some((&f, &eval)))?[0];
    let last = curve.last().expect("nonempty time list");
    println!("n = {n}, t_op = {t_op:.3}, L2 risk at t_op = {:.4e}", at_op.l2_risk);
    println!(
        "final t = {:.3e}: train residual {:.3e} (|y| = {:.3e}), L2 risk {:.4e}",
        last.t,
        last.train_residual,
        flow.targets().norm(),
        last.l2_risk
    );
    Ok(())
}

fn lazy_config(params: &Params) -> Result<LazyConfig, CliError> {
    Ok(LazyConfig {
        d: params.get("d")?,
        layers: params.get("L")?,
        n: params.get("n")?,
        eta: params.get("eta")?,
        steps: params.get("steps")?,
        log_every: params.get("log_every")?,
        widths: Vec::new(),
        seeds: 1,
        root_seed: params.get("seed")?,
    })
}

fn write_diagnostics(path: &Path, params: &Params, err: &Error) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "training aborted: {err}")?;
    if let Error::Diverged { step, residual, previous } = err {
        writeln!(w, "step = {step}")?;
        writeln!(w, "residual = {residual:e}")?;
        writeln!(w, "residual_100_steps_earlier = {previous:e}")?;
        writeln!(w, "hint = lower eta below n / (2 lambda_max(K_0(X, X)))")?;
    }
    writeln!(w)?;
    write!(w, "{}", params.render())?;
    w.flush()?;
    Ok(())
}

pub fn train_cmd(params: &Params) -> Result<(), CliError> {
    let config = lazy_config(params)?;
    let m: usize = params.get("m")?;
    let task = lazy_task(&config, 0)?;
    let desc = NtkDescriptor::full(config.layers)?;
    let flow = FlowPredictor::new(desc, &task)?;
    let grid = probe_grid(config.d, 5, MAX_PROBES);
    let out = Output::prepare(params)?;
    let mut state =
        NetworkState::init_uniform(config.d, config.layers, m, substream_seed(config.root_seed, "train/net", 0))?;
    println!("recommended step size: {:.4}", state.recommended_step_size(&task.x)?);
    let probes = ProbeConfig { grid, log_every: config.log_every, ntk: Some(desc), flow: Some(&flow) };
    let trace = match train(&mut state, &task, config.eta, config.steps, &probes) {
        Ok(t) => t,
        Err(e @ Error::Diverged { .. }) => {
            let path = out.path("diagnostics.txt");
            write_diagnostics(&path, params, &e)?;
            eprintln!("diagnostics written to {}", path.display());
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let mut w = out.create("trace.csv")?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let mut w = out.create("checkpoint.txt")?;
    state.write_checkpoint(&mut w)?;
    w.flush()?;
    out.plot("plot_residual.csv", trace.times.iter().copied().zip(trace.train_residuals.iter().copied()))?;
    let k = trace.times.len() - 1;
    println!(
        "t = {:.3}: residual {:.4e}, kernel gap {:.4e}, predictor gap {:.4e}",
        trace.times[k],
        trace.train_residuals[k],
        trace.kernel_gaps.as_ref().map_or(f64::NAN, |g| g[k]),
        trace.predictor_gaps.as_ref().map_or(f64::NAN, |g| g[k])
    );
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn compare(params: &Params) -> Result<(), CliError> {
    let mut config = lazy_config(params)?;
    config.widths = params.list("widths")?;
    config.seeds = params.get("seeds")?;
    if config.widths.is_empty() || config.seeds == 0 {
        return Err(CliError::Usage("need at least one width and one seed".into()));
    }
    let out = Output::prepare(params)?;
    let jobs: Vec<(usize, usize)> =
        config.widths.iter().flat_map(|&m| (0..config.seeds).map(move |s| (m, s))).collect();
    let rows: Vec<LazyRow> = pool::run(params.get("jobs")?, &jobs, |&(m, s)| lazy_run(&config, m, s))?;
    let mut w = out.create("compare_runs.csv")?;
    write_lazy_rows(&rows, &mut w)?;
    w.flush()?;
    let mut w = out.create("compare.csv")?;
    writeln!(w, "m,kernel_gap_init,kernel_gap_final,predictor_gap,scaled_drift,seeds")?;
    let mut summary = Vec::new();
    for &m in &config.widths {
        let of = |f: fn(&LazyRow) -> f64| median(rows.iter().filter(|r| r.width == m).map(f).collect());
        let row = (
            m,
            of(|r| r.kernel_gap_init),
            of(|r| r.kernel_gap_final),
            of(|r| r.predictor_gap),
            of(|r| r.scaled_drift),
        );
        writeln!(w, "{},{:e},{:e},{:e},{:e},{}", row.0, row.1, row.2, row.3, row.4, config.seeds)?;
        println!(
            "m = {:<6} kernel gap {:.4e}  predictor gap {:.4e}  drift/m^(1/4) {:.4e}",
            row.0, row.1, row.3, row.4
        );
        summary.push(row);
    }
    w.flush()?;
    out.plot("plot_gap.csv", loglog_points(summary.iter().map(|r| (r.0 as f64, r.3))))?;
    Ok(())
}

pub fn cv(params: &Params) -> Result<(), CliError> {
    let config = CvConfig {
        layers: params.get("L")?,
        n_train: params.get("n_train")?,
        n_holdout: params.get("n_holdout")?,
        sigma: params.get("sigma")?,
        bound: params.get("M")?,
        q: params.get("Q")?,
        delta: params.get("delta")?,
        runs: params.get("runs")?,
        grid_points: params.get("n_eval")?,
        root_seed: params.get("seed")?,
    };
    let candidates = candidate_grid(config.n_train, config.q)?;
    let out = Output::prepare(params)?;
    let indices: Vec<usize> = (0..config.runs).collect();
    let runs = pool::run(params.get("jobs")?, &indices, |&r| cv_run(&config, r))?;
    let mut w = out.create("cv_runs.csv")?;
    write_cv_runs(&runs, &mut w)?;
    w.flush()?;
    out.plot("plot_cv.csv", loglog_points(runs.iter().map(|r| (r.best_risk, r.selected_risk))))?;
    let within = runs.iter().filter(|r| r.within_bound()).count();
    println!("candidates: {:?}", candidates);
    println!("{within}/{} runs within 2·best + slack", runs.len());
    Ok(())
}
