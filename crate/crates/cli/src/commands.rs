use std::collections::BTreeMap;

use anyhow::{Context, Result};
use serde::Serialize;
use spade_core::calibration::{even_positions, fit_scan_gated};
use spade_core::estimator::{BatchRow, FixedCovariance};
use spade_core::fisher::{NoiseConfig, SceneGrid};
use spade_core::scene::{default_dual_modes, default_single_modes, WAIST_UM};
use spade_core::synth::{simulate_ensemble, CalibrationSeries};
use spade_core::*;

use crate::args::*;
use crate::manifest::Run;

/// Raised for inconsistent arguments; exits with the validation code.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Micrometres per length unit of the tables.
fn unit_scale(units: Units) -> f64 {
    match units {
        Units::W0 => 1.0,
        Units::Um => WAIST_UM,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut run = Run::new(&cli.out_dir)?;
    let name = match &cli.command {
        Command::IdealCalib(a) => {
            ideal_calib(a, &mut run)?;
            "ideal-calib"
        }
        Command::Fit(a) => {
            fit(a, &mut run)?;
            "fit"
        }
        Command::Simulate(a) => {
            simulate(a, cli, &mut run)?;
            "simulate"
        }
        Command::Emulate(a) => {
            emulate(a, cli, &mut run)?;
            "emulate"
        }
        Command::Estimate(a) => {
            estimate_cmd(a, cli, &mut run)?;
            "estimate"
        }
        Command::CrbSweep(a) => {
            crb_sweep_cmd(a, cli, &mut run)?;
            "crb-sweep"
        }
    };
    let manifest = run.finish(name, cli.seed, cli)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn layout(args: &LayoutArgs, symmetric: bool) -> Result<DemuxLayout> {
    let layout = if args.no_dual {
        DemuxLayout::new(false, 0.0, 1.0, default_single_modes())?
    } else {
        DemuxLayout::new(true, args.shift2, args.split1, default_dual_modes())?
    };
    let mut bounds = *layout.bounds();
    bounds.nonnegative_d = symmetric;
    Ok(layout.with_bounds(bounds))
}

fn model(args: &ModelArgs, run: &mut Run) -> Result<ForwardModel> {
    let layout = layout(&args.layout, args.symmetric)?;
    let model = if let Some(path) = &args.calibration {
        let fitted: SourceResponseModel = io::read_json(run.input(path))?;
        ForwardModel::from_response(fitted, layout)?
    } else if args.twin {
        let twin = TwinResponse::new(IdealResponse::new(layout.clone()), args.offset, args.perturbation);
        ForwardModel::from_response(twin, layout)?
    } else {
        ForwardModel::from_response(IdealResponse::new(layout.clone()), layout)?
    };
    Ok(model)
}

fn parse_scene(text: &str, scale: f64) -> Result<Scene> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(usage(format!("scene `{text}` is not `d,c,p`")));
    }
    let mut v = [0.0; 3];
    for (k, part) in parts.iter().enumerate() {
        v[k] = part
            .parse()
            .map_err(|_| usage(format!("scene `{text}`: `{part}` is not a number")))?;
    }
    Ok(Scene::new(v[0] / scale, v[1] / scale, v[2])?)
}

fn scenes(args: &SceneArgs, units: Units, default: Option<Ensemble>, run: &mut Run) -> Result<Vec<Scene>> {
    let scale = unit_scale(units);
    let mut out = Vec::new();
    for s in &args.scenes {
        out.push(parse_scene(s, scale)?);
    }
    if let Some(path) = &args.scene_file {
        let listed: Vec<Scene> = io::read_json(run.input(path))?;
        out.extend(listed.iter().map(|s| Scene::new(s.d() / scale, s.c() / scale, s.p())).collect::<spade_core::Result<Vec<_>>>()?);
    }
    let ensemble = args.ensemble.map(|e| match e {
        EnsembleArg::Distinguishable => Ensemble::Distinguishable,
        EnsembleArg::Indistinguishable => Ensemble::Indistinguishable,
    });
    if let Some(e) = ensemble.or(if out.is_empty() { default } else { None }) {
        out.extend(generate_table1_ensemble(e));
    }
    if out.is_empty() {
        return Err(usage("no scenes given; use --scene, --scene-file or --ensemble"));
    }
    Ok(out)
}

fn noise_spec(args: &NoiseArgs, m: usize, seed: u64) -> Result<NoiseSpec> {
    let budget = PhotonBudget::new(args.photons)?;
    let sigma = match args.sigma.len() {
        0 => Vec::new(),
        1 => vec![args.sigma[0]; m],
        n if n == m => args.sigma.clone(),
        n => return Err(usage(format!("--sigma has {n} values for {m} modes"))),
    };
    if args.noise != NoiseArg::Shot && sigma.is_empty() {
        return Err(usage("additive noise needs --sigma"));
    }
    let mut spec = match args.noise {
        NoiseArg::Shot => NoiseSpec::shot_noise(budget, args.bins, seed),
        NoiseArg::Gaussian => NoiseSpec::gaussian(sigma, args.bins, seed),
        NoiseArg::Combined => NoiseSpec::combined(budget, sigma, args.bins, seed),
    };
    spec.budget = budget;
    Ok(spec)
}

fn ideal_calib(args: &IdealCalibArgs, run: &mut Run) -> Result<()> {
    if args.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let layout = layout(&args.layout, false)?;
    let ideal = IdealResponse::new(layout);
    let positions = even_positions(args.points, args.half_range);
    let mut scans = vec![CalibrationScan::sample(&ideal, Source::One, positions.clone())?];
    if args.distinguishable {
        let twin = TwinResponse::new(ideal, args.offset, args.perturbation);
        scans.push(CalibrationScan::sample(&twin, Source::Two, positions)?);
    }
    io::write_calibration_csv(run.output(&args.output), &scans)?;
    Ok(())
}

fn fit(args: &FitArgs, run: &mut Run) -> Result<()> {
    let scans = io::read_calibration_csv(run.input(&args.input))?;
    let mut model: Option<SourceResponseModel> = None;
    for scan in &scans {
        let fitted = fit_scan_gated(scan, args.degree, args.rms_gate)?;
        model = Some(match model {
            None => fitted,
            Some(m) => m.merge(fitted)?,
        });
    }
    let mut model = model.ok_or_else(|| usage("calibration file has no scans"))?;
    let single_source = scans.iter().all(|s| s.source() == Source::One);
    if args.aliased || single_source {
        model = model.aliased()?;
    }
    for (source, mode) in model.flagged_curves() {
        eprintln!("warning: curve {} of source {} exceeds the residual gate", mode.label(), source.id());
    }
    if !model.is_aliased() {
        println!("visibility {:.6}", model.visibility()?);
    }
    io::write_json(run.output(&args.output), &model)?;
    Ok(())
}

fn simulate(args: &SimulateArgs, cli: &Cli, run: &mut Run) -> Result<()> {
    let model = model(&args.model, run)?;
    let spec = noise_spec(&args.noise, model.n_modes(), cli.seed)?;
    let modes = model.layout().active_modes().to_vec();
    if args.scan {
        let positions = even_positions(args.points, args.half_range);
        let series = CalibrationSeries::simulate(model.response(), Source::One, &positions, &spec)?;
        io::write_time_series_csv(run.output(&args.output), &modes, series.points(), args.noise.photons)?;
        return Ok(());
    }
    let scenes = scenes(&args.scenes, cli.units, None, run)?;
    let series = simulate_ensemble(&model, &scenes, &spec)
        .into_iter()
        .collect::<spade_core::Result<Vec<_>>>()?;
    let data: Vec<(Scene, ObservationSeries)> = scenes.into_iter().zip(series).collect();
    io::write_observations_csv(run.output(&args.output), &modes, &data)?;
    Ok(())
}

fn emulate(args: &EmulateArgs, cli: &Cli, run: &mut Run) -> Result<()> {
    let (modes, points) = io::read_time_series_csv(run.input(&args.series))?;
    let calib = CalibrationSeries::new(points)?;
    let fitted: Option<SourceResponseModel> = match &args.calibration {
        Some(path) => Some(io::read_json(run.input(path))?),
        None => None,
    };
    if let Some(f) = &fitted {
        if f.modes() != modes.as_slice() {
            return Err(usage("model modes differ from the time-series columns"));
        }
    }
    let scenes = scenes(&args.scenes, cli.units, Some(Ensemble::Indistinguishable), run)?;
    let mut data = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let (x1, x2) = s.positions();
        let e = match &fitted {
            Some(f) => calib.emulate(f, x1, x2, s.p(), PhotonBudget::default())?.emulated,
            None => emulate_indistinguishable(calib.nearest(x1).0, calib.nearest(x2).0, s.p())?,
        };
        data.push((e.scene, e.series));
    }
    io::write_observations_csv(run.output(&args.output), &modes, &data)?;
    Ok(())
}

/// One estimated bin, as written to the per-bin CSV.
#[derive(Debug, Serialize)]
struct BinRow {
    d_ref: f64,
    c_ref: f64,
    p_ref: f64,
    bin_index: usize,
    d_hat: f64,
    c_hat: f64,
    p_hat: f64,
    loss: f64,
    converged: bool,
    n_alternates: usize,
    error: String,
}

/// Per-separation means over scenes.
#[derive(Debug, Serialize)]
struct TableRow {
    d_ref: f64,
    n_scenes: usize,
    d_abs_bias: f64,
    c_abs_bias: f64,
    p_abs_bias: f64,
    d_sigma: f64,
    c_sigma: f64,
    p_sigma: f64,
    n_converged: usize,
}

fn scale_batch(mut r: BatchRow, k: f64) -> BatchRow {
    for v in [
        &mut r.d_ref,
        &mut r.c_ref,
        &mut r.d_hat_mean,
        &mut r.c_hat_mean,
        &mut r.d_bias,
        &mut r.c_bias,
        &mut r.d_sigma,
        &mut r.c_sigma,
    ] {
        *v *= k;
    }
    r
}

fn failed_batch(scene: &Scene, converged: usize) -> BatchRow {
    BatchRow {
        d_ref: scene.d(),
        c_ref: scene.c(),
        p_ref: scene.p(),
        d_hat_mean: f64::NAN,
        c_hat_mean: f64::NAN,
        p_hat_mean: f64::NAN,
        d_bias: f64::NAN,
        c_bias: f64::NAN,
        p_bias: f64::NAN,
        d_sigma: f64::NAN,
        c_sigma: f64::NAN,
        p_sigma: f64::NAN,
        n_converged: converged,
    }
}

fn table(rows: &[BatchRow]) -> Vec<TableRow> {
    let mut groups: BTreeMap<u64, Vec<&BatchRow>> = BTreeMap::new();
    for r in rows {
        // Order-preserving key for non-negative and negative separations.
        let bits = r.d_ref.to_bits();
        let key = if r.d_ref.is_sign_negative() { !bits } else { bits | (1 << 63) };
        groups.entry(key).or_default().push(r);
    }
    groups
        .values()
        .map(|g| {
            let ok: Vec<&&BatchRow> = g.iter().filter(|r| r.d_sigma.is_finite()).collect();
            let mean = |f: &dyn Fn(&BatchRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            TableRow {
                d_ref: g[0].d_ref,
                n_scenes: g.len(),
                d_abs_bias: mean(&|r| r.d_bias.abs()),
                c_abs_bias: mean(&|r| r.c_bias.abs()),
                p_abs_bias: mean(&|r| r.p_bias.abs()),
                d_sigma: mean(&|r| r.d_sigma),
                c_sigma: mean(&|r| r.c_sigma),
                p_sigma: mean(&|r| r.p_sigma),
                n_converged: g.iter().map(|r| r.n_converged).sum(),
            }
        })
        .collect()
}

type Dataset = Vec<(Scene, ObservationSeries)>;

/// Distinguishable ensemble with twin curves and additive noise.
fn fig3_data(args: &EstimateArgs, seed: u64) -> Result<(ForwardModel, Dataset)> {
    let layout = layout(&args.model.layout, false)?;
    let twin = TwinResponse::new(IdealResponse::new(layout.clone()), args.model.offset, args.model.perturbation);
    let model = ForwardModel::from_response(twin, layout)?;
    let scenes = generate_table1_ensemble(Ensemble::Distinguishable);
    let spec = NoiseSpec::gaussian(vec![args.sigma; model.n_modes()], args.bins, seed);
    let series = simulate_ensemble(&model, &scenes, &spec)
        .into_iter()
        .collect::<spade_core::Result<Vec<_>>>()?;
    Ok((model, scenes.into_iter().zip(series).collect()))
}

/// Indistinguishable ensemble emulated from a noisy ideal calibration run.
fn fig4_data(args: &EstimateArgs, seed: u64, run: &mut Run) -> Result<(ForwardModel, Dataset)> {
    let raw = layout(&args.model.layout, false)?;
    let m = raw.n_modes();
    let spec = NoiseSpec::gaussian(vec![args.sigma; m], args.bins, seed);
    let positions = even_positions(61, 0.35);
    let calib = CalibrationSeries::simulate(&IdealResponse::new(raw.clone()), Source::One, &positions, &spec)?;
    let scan = calib.mean_scan(Source::One, raw.active_modes().to_vec())?;
    let fitted = fit_scan(&scan, spade_core::calibration::DEFAULT_DEGREE)?.aliased()?;
    io::write_json(run.output(&format!("{}_model.json", args.output)), &fitted)?;
    let symmetric = layout(&args.model.layout, true)?;
    let model = ForwardModel::from_response(fitted.clone(), symmetric)?;
    let mut data = Vec::new();
    for s in generate_table1_ensemble(Ensemble::Indistinguishable) {
        let (x1, x2) = s.positions();
        let e = calib.emulate(&fitted, x1, x2, s.p(), PhotonBudget::default())?.emulated;
        data.push((e.scene, e.series));
    }
    Ok((model, data))
}

fn estimate_cmd(args: &EstimateArgs, cli: &Cli, run: &mut Run) -> Result<()> {
    let (model, data) = match (args.preset, &args.input) {
        (Some(EstimatePreset::Fig3), _) => fig3_data(args, cli.seed)?,
        (Some(EstimatePreset::Fig4), _) => fig4_data(args, cli.seed, run)?,
        (_, Some(path)) => {
            let model = model(&args.model, run)?;
            let (modes, data) = io::read_observations_csv(run.input(path))?;
            if modes.as_slice() != model.layout().active_modes() {
                return Err(usage("observation columns differ from the layout's active modes"));
            }
            (model, data)
        }
        (_, None) => return Err(usage("estimate needs --input or --preset fig3|fig4")),
    };
    let config: OptimizerConfig = match &args.optimizer {
        Some(path) => io::read_json(run.input(path))?,
        None => OptimizerConfig::default(),
    };
    let k = unit_scale(cli.units);
    let mut bins = Vec::new();
    let mut batch = Vec::new();
    let mut stats = Vec::new();
    for (scene, series) in &data {
        let cov = match args.covariance {
            CovarianceArg::Estimated => estimate_covariance(series)?,
            CovarianceArg::Identity => NoiseCovariance::identity(model.n_modes()),
        };
        let results = estimate_series(&model, series, &cov, &config);
        let mut ok = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            let row = match &r {
                Ok(e) => BinRow {
                    d_ref: scene.d() * k,
                    c_ref: scene.c() * k,
                    p_ref: scene.p(),
                    bin_index: i,
                    d_hat: e.theta_hat.d() * k,
                    c_hat: e.theta_hat.c() * k,
                    p_hat: e.theta_hat.p(),
                    loss: e.loss_value,
                    converged: e.converged,
                    n_alternates: e.alternates.len(),
                    error: String::new(),
                },
                Err(err) => BinRow {
                    d_ref: scene.d() * k,
                    c_ref: scene.c() * k,
                    p_ref: scene.p(),
                    bin_index: i,
                    d_hat: f64::NAN,
                    c_hat: f64::NAN,
                    p_hat: f64::NAN,
                    loss: f64::NAN,
                    converged: false,
                    n_alternates: 0,
                    error: err.to_string(),
                },
            };
            bins.push(row);
            if let Ok(e) = r {
                ok.push(e);
            }
        }
        match scene_statistics(&ok, scene) {
            Ok(s) => {
                batch.push(scale_batch(BatchRow::from(&s), k));
                stats.push(s);
            }
            Err(spade_core::Error::TooFewConverged(n)) => {
                eprintln!("warning: scene {:?}: only {n} converged bins", scene.as_array());
                batch.push(scale_batch(failed_batch(scene, n), k));
            }
            Err(e) => return Err(e.into()),
        }
    }
    io::write_rows(run.output(&format!("{}_bins.csv", args.output)), &bins)?;
    io::write_rows(run.output(&format!("{}_batch.csv", args.output)), &batch)?;
    io::write_json(run.output(&format!("{}_scenes.json", args.output)), &stats)?;
    if args.preset.is_some() {
        io::write_rows(run.output(&format!("{}_table_a.csv", args.output)), &table(&batch))?;
    }
    Ok(())
}

/// Mean and 90% band at one separation, flattened for CSV.
#[derive(Debug, Serialize)]
struct BandRow {
    d: f64,
    n_scenes: usize,
    n_finite_d: usize,
    sigma_d_mean: f64,
    sigma_d_lo: f64,
    sigma_d_hi: f64,
    sigma_c_mean: f64,
    sigma_c_lo: f64,
    sigma_c_hi: f64,
    sigma_p_mean: f64,
    sigma_p_lo: f64,
    sigma_p_hi: f64,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    sources: &'static str,
    config: &'static str,
    bands: Vec<BandRow>,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    noise_model: &'static str,
    photons: Option<f64>,
    qcrb_benchmark: Option<f64>,
    sweeps: Vec<SweepSummary>,
}

fn crb_sweep_cmd(args: &CrbSweepArgs, cli: &Cli, run: &mut Run) -> Result<()> {
    let SweepPreset::Fig1 = args.preset;
    let grid = SceneGrid::fig1().scenes()?;
    let k = unit_scale(cli.units);
    let sources: &[(&str, bool)] = match args.sources {
        SourcesArg::Distinguishable => &[("distinguishable", true)],
        SourcesArg::Indistinguishable => &[("indistinguishable", false)],
        SourcesArg::Both => &[("distinguishable", true), ("indistinguishable", false)],
    };
    let configs: &[(&str, bool)] = match args.config {
        ConfigArg::One => &[("1mplc", false)],
        ConfigArg::Two => &[("2mplc", true)],
        ConfigArg::Both => &[("1mplc", false), ("2mplc", true)],
    };
    let budget = PhotonBudget::new(args.photons)?;
    let mut report = SweepReport {
        noise_model: if args.sigma.is_some() { "gaussian" } else { "shot_noise" },
        photons: args.sigma.is_none().then_some(args.photons),
        qcrb_benchmark: args.sigma.is_none().then(|| qcrb_benchmark(budget) * k),
        sweeps: Vec::new(),
    };
    for &(src, distinguishable) in sources {
        for &(cfg, dual) in configs {
            let layout = if dual {
                DemuxLayout::new(true, args.shift2, 0.5, default_dual_modes())?
            } else {
                DemuxLayout::single_default()
            };
            let ideal = IdealResponse::new(layout.clone());
            let model = if distinguishable {
                ForwardModel::from_response(TwinResponse::new(ideal, args.offset, args.perturbation), layout)?
            } else {
                ForwardModel::from_response(ideal, layout)?
            };
            let noise = match args.sigma {
                Some(s) if s > 0.0 => NoiseConfig::Gaussian(NoiseCovariance::Fixed(
                    FixedCovariance::diagonal(&vec![s * s; model.n_modes()])?,
                )),
                Some(s) => return Err(usage(format!("--sigma must be positive, got {s}"))),
                None => NoiseConfig::ShotNoise(budget),
            };
            let sweep = crb_sweep(&model, &grid, &noise)?;
            let mut rows = sweep.rows(cfg);
            for r in &mut rows {
                r.d_ref *= k;
                r.c_ref *= k;
                r.sigma_d_crb *= k;
                r.sigma_c_crb *= k;
            }
            io::write_rows(run.output(&format!("crb_{src}_{cfg}.csv")), &rows)?;
            let bands: Vec<BandRow> = sweep
                .summary
                .iter()
                .map(|b| BandRow {
                    d: b.d * k,
                    n_scenes: b.n_scenes,
                    n_finite_d: b.n_finite[0],
                    sigma_d_mean: b.mean[0] * k,
                    sigma_d_lo: b.lo[0] * k,
                    sigma_d_hi: b.hi[0] * k,
                    sigma_c_mean: b.mean[1] * k,
                    sigma_c_lo: b.lo[1] * k,
                    sigma_c_hi: b.hi[1] * k,
                    sigma_p_mean: b.mean[2],
                    sigma_p_lo: b.lo[2],
                    sigma_p_hi: b.hi[2],
                })
                .collect();
            io::write_rows(run.output(&format!("crb_{src}_{cfg}_band.csv")), &bands)?;
            report.sweeps.push(SweepSummary {
                sources: src,
                config: cfg,
                bands,
            });
        }
    }
    io::write_json(run.output("crb_summary.json"), &report)?;
    Ok(())
}

/// Exit code for a failed run: 3 for numerical failures, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<spade_core::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}
