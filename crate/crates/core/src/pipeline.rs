//! The four pipeline stages as file-to-file commands, plus plot-data export
//! and the continuous-versus-non-continuous check.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ga::{evaluate_solution, optimize_thresholds, GaConfig, OptimizationResult};
use crate::gp::{risk_bound, FitOptions, GpModel};
use crate::sim::batch::create_dataset;
use crate::sim::{
    benchmark_modes, collect_dataset, read_dataset, run_replay, run_trial_with, BenchmarkRow, ReplayConfig,
    ReplayReport, SampleRecord, SceneConfig, TrialOptions,
};

pub const MANIFEST_FORMAT: &str = "mprio-manifest";
pub const RESULT_FORMAT: &str = "mprio-result";
pub const ASSESSMENT_FORMAT: &str = "mprio-assessment";
pub const BENCHMARK_HEADER: &str = "# mprio-benchmark v1";
pub const FORMAT_VERSION: u32 = 1;

pub const PRODUCT_MODEL: &str = "product.gp.json";
pub const RISK_MODEL: &str = "risk.gp.json";

/// Points on each exported GP band.
pub const BAND_POINTS: usize = 200;

// ---------------------------------------------------------------------------
// Continuous versus non-continuous recovery

/// Durations of one recovery and one manufacturing process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessTimes {
    /// Recovery time with manufacturing halted (s).
    pub t_r: f64,
    /// Manufacturing time with nothing else going on (s).
    pub t_m: f64,
    /// Extra recovery time when manufacturing keeps running (s).
    pub dt_r: f64,
    /// Extra manufacturing time while a recovery is under way (s).
    pub dt_m: f64,
    pub n_r: u32,
}

impl ProcessTimes {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_r > 0.0 && self.t_m > 0.0) || !self.t_r.is_finite() || !self.t_m.is_finite() {
            return Err(Error::field("t_r/t_m", "must be positive"));
        }
        if !(self.dt_r >= 0.0 && self.dt_m >= 0.0) || !self.dt_r.is_finite() || !self.dt_m.is_finite() {
            return Err(Error::field("dt_r/dt_m", "must be non-negative"));
        }
        if self.n_r == 0 {
            return Err(Error::field("n_r", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixResult {
    pub continuous_better: bool,
    /// `T_r·T_m − ΔT_r·ΔT_m` (s²).
    pub margin: f64,
    /// Manufacturing count of the non-continuous process.
    pub n_m: f64,
    /// Manufacturing count of the continuous process.
    pub n_m_prime: f64,
}

/// The continuous process wins exactly when the margin is strictly positive.
pub fn appendix_condition(t: &ProcessTimes) -> Result<AppendixResult> {
    t.validate()?;
    let n_r = f64::from(t.n_r);
    let margin = t.t_r * t.t_m - t.dt_r * t.dt_m;
    let n_m = (n_r * (t.t_r + t.dt_r) - n_r * t.t_r) / t.t_m;
    let n_m_prime = n_r * (t.t_r + t.dt_r) / (t.t_m + t.dt_m);
    Ok(AppendixResult {
        continuous_better: margin > 0.0,
        margin,
        n_m,
        n_m_prime,
    })
}

// ---------------------------------------------------------------------------
// Files and manifests

/// `builtin:default`, `builtin:preliminary` or a path to a scene file.
pub fn load_scene(spec: &str) -> Result<SceneConfig> {
    match spec {
        "builtin:default" => Ok(SceneConfig::default_scene()),
        "builtin:preliminary" => Ok(SceneConfig::preliminary_scene()),
        s if s.starts_with("builtin:") => Err(Error::Argument(format!(
            "unknown built-in scene `{s}` (expected builtin:default or builtin:preliminary)"
        ))),
        path => SceneConfig::load(path),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Provenance of one command run, written next to its main output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub scene_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            parameters: BTreeMap::new(),
            scene_sha256: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0.0,
        }
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.parameters.insert(key.into(), v);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Record the outputs and write the manifest beside the first one.
    pub fn finish(mut self, outputs: &[PathBuf]) -> Result<PathBuf> {
        for p in outputs {
            self.outputs.push(FileDigest::of(p)?);
        }
        self.finished_unix = unix_now();
        let first = outputs
            .first()
            .ok_or_else(|| Error::Argument("a manifest needs at least one output".into()))?;
        let path = manifest_path(first);
        write_json(&path, &self)?;
        Ok(path)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::parse(path, e))
}

fn check_header(path: &Path, format: &str, version: u32, want: &str) -> Result<()> {
    if format != want || version != FORMAT_VERSION {
        return Err(Error::parse(
            path,
            format!("expected {want} v{FORMAT_VERSION}, found {format} v{version}"),
        ));
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))
}

fn csv_row(w: &mut csv::Writer<fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| Error::parse(path, e))
}

// ---------------------------------------------------------------------------
// sample

pub fn cmd_sample(
    scene_spec: &str,
    n_samples: usize,
    n_trials: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<SampleRecord>> {
    let scene = load_scene(scene_spec)?;
    let mut manifest = RunManifest::start("sample")
        .param("scene", scene_spec)
        .param("n_samples", n_samples)
        .param("n_trials", n_trials);
    manifest.scene_sha256 = Some(scene.digest());
    manifest.seeds.push(seed);
    ensure_parent(out)?;
    let mut writer = create_dataset(out, scene.n_manufacturing())?;
    let records = collect_dataset(&scene, n_samples, n_trials, seed, &mut |rec| {
        writer.append(rec).map_err(|e| Error::io(out, e))
    })?;
    drop(writer);
    manifest.finish(&[out.to_path_buf()])?;
    Ok(records)
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Clone)]
pub struct FittedModels {
    pub product: GpModel,
    pub risk: GpModel,
}

pub fn fit_dataset(records: &[SampleRecord], seed: u64) -> Result<FittedModels> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.thresholds.clone()).collect();
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    let product: Vec<f64> = records.iter().map(|r| r.x_product).collect();
    let risk: Vec<f64> = records.iter().map(|r| r.x_risk).collect();
    Ok(FittedModels {
        product: GpModel::fit(&rows, &product, &opts)?,
        risk: GpModel::fit(&rows, &risk, &opts)?,
    })
}

/// Fit both surrogates; writes `product.gp.json` and `risk.gp.json` into `out_dir`.
pub fn cmd_fit(dataset: &Path, out_dir: &Path, seed: u64) -> Result<FittedModels> {
    let mut manifest = RunManifest::start("fit").param("dataset", dataset.display().to_string());
    manifest.seeds.push(seed);
    manifest.input(dataset)?;
    let records = read_dataset(dataset)?;
    let models = fit_dataset(&records, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (p, r) = (out_dir.join(PRODUCT_MODEL), out_dir.join(RISK_MODEL));
    models.product.save(&p)?;
    models.risk.save(&r)?;
    manifest.finish(&[p, r])?;
    Ok(models)
}

pub fn load_models(dir: &Path) -> Result<FittedModels> {
    Ok(FittedModels {
        product: GpModel::load(dir.join(PRODUCT_MODEL))?,
        risk: GpModel::load(dir.join(RISK_MODEL))?,
    })
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRun {
    pub t_lim: f64,
    pub zeta: f64,
    pub result: OptimizationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub format: String,
    pub version: u32,
    pub l_max: f64,
    pub ga: GaConfig,
    pub product_model_sha256: String,
    pub risk_model_sha256: String,
    pub runs: Vec<OptimizationRun>,
}

impl ResultFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: ResultFile = read_json(path)?;
        check_header(path, &f.format, f.version, RESULT_FORMAT)?;
        Ok(f)
    }

    pub fn any_infeasible(&self) -> bool {
        self.runs.iter().any(|r| !r.result.feasible)
    }
}

/// One GA run per (t_lim, ζ) pair against fitted models.
pub fn optimize_models(
    models: &FittedModels,
    t_lims: &[f64],
    zetas: &[f64],
    l_max: f64,
    ga: &GaConfig,
) -> Result<Vec<OptimizationRun>> {
    let dim = models.product.dim();
    if models.risk.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: models.risk.dim(),
            context: "risk model inputs",
        });
    }
    if t_lims.is_empty() || zetas.is_empty() {
        return Err(Error::Argument("need at least one t_lim and one zeta".into()));
    }
    let mut runs = Vec::with_capacity(t_lims.len() * zetas.len());
    for &zeta in zetas {
        // Validates ζ once before the GA calls it thousands of times.
        risk_bound(&models.risk, &vec![0.0; dim], zeta)?;
        for &t_lim in t_lims {
            let result = optimize_thresholds(
                |x| models.product.predict(x).0,
                |x| {
                    let (mu, sigma) = models.risk.predict(x);
                    mu + zeta * sigma
                },
                t_lim,
                l_max,
                dim,
                ga,
            )?;
            runs.push(OptimizationRun { t_lim, zeta, result });
        }
    }
    Ok(runs)
}

pub fn cmd_optimize(
    models_dir: &Path,
    t_lims: &[f64],
    zetas: &[f64],
    l_max: f64,
    ga: &GaConfig,
    out: &Path,
) -> Result<ResultFile> {
    let mut manifest = RunManifest::start("optimize")
        .param("t_lim", t_lims)
        .param("zeta", zetas)
        .param("l_max", l_max)
        .param("ga", ga);
    manifest.seeds.push(ga.seed);
    let (p, r) = (models_dir.join(PRODUCT_MODEL), models_dir.join(RISK_MODEL));
    manifest.input(&p)?;
    manifest.input(&r)?;
    let models = load_models(models_dir)?;
    let runs = optimize_models(&models, t_lims, zetas, l_max, ga)?;
    let file = ResultFile {
        format: RESULT_FORMAT.into(),
        version: FORMAT_VERSION,
        l_max,
        ga: *ga,
        product_model_sha256: sha256_file(&p)?,
        risk_model_sha256: sha256_file(&r)?,
        runs,
    };
    ensure_parent(out)?;
    write_json(out, &file)?;
    manifest.finish(&[out.to_path_buf()])?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRow {
    pub t_lim: Option<f64>,
    pub zeta: Option<f64>,
    pub thresholds: Vec<f64>,
    pub predicted_product: Option<f64>,
    pub predicted_risk_bound: Option<f64>,
    pub feasible: Option<bool>,
    pub realized: SampleRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub format: String,
    pub version: u32,
    pub scene_sha256: String,
    pub n_trials: usize,
    pub seed: u64,
    /// All thresholds zero: the recovery robot always has priority.
    pub baseline: AssessmentRow,
    pub rows: Vec<AssessmentRow>,
}

/// Simulate every optimized design and the `l̄ = 0` baseline on the same seeds.
pub fn evaluate_results(scene: &SceneConfig, results: &ResultFile, n_trials: usize, seed: u64) -> Result<Assessment> {
    let zeros = vec![0.0; scene.n_manufacturing()];
    let baseline = AssessmentRow {
        t_lim: None,
        zeta: None,
        realized: evaluate_solution(scene, &zeros, n_trials, seed)?,
        thresholds: zeros,
        predicted_product: None,
        predicted_risk_bound: None,
        feasible: None,
    };
    let mut rows = Vec::with_capacity(results.runs.len());
    for run in &results.runs {
        let r = &run.result;
        rows.push(AssessmentRow {
            t_lim: Some(run.t_lim),
            zeta: Some(run.zeta),
            thresholds: r.thresholds_star.clone(),
            predicted_product: Some(r.predicted_product),
            predicted_risk_bound: Some(r.predicted_risk_bound),
            feasible: Some(r.feasible),
            realized: evaluate_solution(scene, &r.thresholds_star, n_trials, seed)?,
        });
    }
    Ok(Assessment {
        format: ASSESSMENT_FORMAT.into(),
        version: FORMAT_VERSION,
        scene_sha256: scene.digest(),
        n_trials,
        seed,
        baseline,
        rows,
    })
}

pub fn cmd_evaluate(scene_spec: &str, result: &Path, n_trials: usize, seed: u64, out: &Path) -> Result<Assessment> {
    let scene = load_scene(scene_spec)?;
    let mut manifest = RunManifest::start("evaluate")
        .param("scene", scene_spec)
        .param("n_trials", n_trials);
    manifest.scene_sha256 = Some(scene.digest());
    manifest.seeds.push(seed);
    manifest.input(result)?;
    let results = ResultFile::load(result)?;
    let assessment = evaluate_results(&scene, &results, n_trials, seed)?;
    ensure_parent(out)?;
    write_json(out, &assessment)?;
    manifest.finish(&[out.to_path_buf()])?;
    Ok(assessment)
}

// ---------------------------------------------------------------------------
// benchmark

pub fn write_benchmark(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    ensure_parent(path)?;
    let mut text = format!("{BENCHMARK_HEADER}\n");
    text.push_str(
        "mode,risk_mean,risk_sd,product_mean,product_sd,n_trials,discarded,min_pair_distance,hard_failures\n",
    );
    for row in rows {
        let r = &row.outcome.record;
        let (pm, ps) = if row.mode.has_productivity() {
            (r.x_product.to_string(), r.product_sd.to_string())
        } else {
            ("-".into(), "-".into())
        };
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.mode.label(),
            r.x_risk,
            r.risk_sd,
            pm,
            ps,
            r.n_trials,
            r.discarded,
            r.min_pair_distance.map_or("-".into(), |d| d.to_string()),
            r.hard_failures
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_benchmark(scene_spec: &str, n_trials: usize, seed: u64, out: &Path) -> Result<Vec<BenchmarkRow>> {
    let scene = load_scene(scene_spec)?;
    let mut manifest = RunManifest::start("benchmark")
        .param("scene", scene_spec)
        .param("n_trials", n_trials);
    manifest.scene_sha256 = Some(scene.digest());
    manifest.seeds.push(seed);
    let rows = benchmark_modes(&scene, n_trials, seed)?;
    write_benchmark(out, &rows)?;
    manifest.finish(&[out.to_path_buf()])?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// export-plots

fn fmt(v: f64) -> String {
    v.to_string()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Evenly spaced grid of `BAND_POINTS` values over `[0, l_max]`.
pub fn band_grid(l_max: f64) -> Vec<f64> {
    (0..BAND_POINTS)
        .map(|i| l_max * i as f64 / (BAND_POINTS - 1) as f64)
        .collect()
}

/// GP mean and standard deviation along each axis, the other axes held at
/// the median of the training inputs. Columns: `axis,l1..lN,mu,sigma`.
pub fn write_band(path: &Path, model: &GpModel, l_max: f64) -> Result<()> {
    let d = model.dim();
    let inputs = model.inputs();
    let medians: Vec<f64> = (0..d).map(|k| median(inputs.iter().map(|r| r[k]).collect())).collect();
    let mut w = csv_writer(path)?;
    let mut header = vec!["axis".to_string()];
    header.extend((1..=d).map(|i| format!("l{i}")));
    header.extend(["mu".to_string(), "sigma".to_string()]);
    csv_row(&mut w, path, &header)?;
    for axis in 0..d {
        for v in band_grid(l_max) {
            let mut x = medians.clone();
            x[axis] = v;
            let (mu, sigma) = model.predict(&x);
            let mut row = vec![(axis + 1).to_string()];
            row.extend(x.iter().map(|&c| fmt(c)));
            row.extend([fmt(mu), fmt(sigma)]);
            csv_row(&mut w, path, &row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scatter(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let d = records.first().map_or(0, |r| r.thresholds.len());
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = (1..=d).map(|i| format!("l{i}")).collect();
    header.extend(["x_product", "x_risk"].map(String::from));
    csv_row(&mut w, path, &header)?;
    for r in records {
        let mut row: Vec<String> = r.thresholds.iter().map(|&v| fmt(v)).collect();
        row.extend([fmt(r.x_product), fmt(r.x_risk)]);
        csv_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_tlim_curve(path: &Path, results: &ResultFile) -> Result<()> {
    let d = results.runs.first().map_or(0, |r| r.result.thresholds_star.len());
    let mut w = csv_writer(path)?;
    let mut header = vec!["t_lim".to_string(), "zeta".to_string(), "feasible".to_string()];
    header.extend((1..=d).map(|i| format!("l{i}")));
    header.extend(["predicted_product", "predicted_risk_bound"].map(String::from));
    csv_row(&mut w, path, &header)?;
    for run in &results.runs {
        let r = &run.result;
        let mut row = vec![fmt(run.t_lim), fmt(run.zeta), r.feasible.to_string()];
        row.extend(r.thresholds_star.iter().map(|&v| fmt(v)));
        row.extend([fmt(r.predicted_product), fmt(r.predicted_risk_bound)]);
        csv_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One recorded trial: time, then position and target of every robot, then
/// the priority of every manufacturing robot.
pub fn write_trial_trace(path: &Path, scene: &SceneConfig, thresholds: &[f64], seed: u64) -> Result<()> {
    let opts = TrialOptions {
        record: true,
        ..TrialOptions::default()
    };
    let res = run_trial_with(scene, thresholds, seed, &opts)?;
    let log = res
        .trajectory_log
        .ok_or_else(|| Error::Config("trial did not record a trajectory".into()))?;
    let names: Vec<&str> = scene.file.robots.iter().map(|r| r.name.as_str()).collect();
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    for n in &names {
        header.extend(["x", "y", "z"].map(|c| format!("{n}.{c}")));
        header.extend(["x", "y", "z"].map(|c| format!("{n}.target_{c}")));
    }
    for &m in &scene.roles.manufacturing {
        header.push(format!("{}.priority", names[m]));
    }
    csv_row(&mut w, path, &header)?;
    for (k, &t) in log.time.iter().enumerate() {
        let mut row = vec![fmt(t)];
        for (p, g) in log.positions[k].iter().zip(&log.targets[k]) {
            row.extend([p.x, p.y, p.z, g.x, g.y, g.z].map(fmt));
        }
        let pr = log.priorities.get(k);
        for i in 0..scene.roles.manufacturing.len() {
            row.push(
                pr.and_then(|p| p.get(i))
                    .map_or(String::new(), |p| p.value().to_string()),
            );
        }
        csv_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct ExportInputs<'a> {
    pub dataset: Option<&'a Path>,
    pub models: Option<&'a Path>,
    pub results: Option<&'a Path>,
    /// Scene, thresholds and seed of a trial to trace.
    pub trace: Option<(&'a SceneConfig, Vec<f64>, u64)>,
    pub l_max: f64,
}

pub fn cmd_export_plots(inputs: &ExportInputs<'_>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = RunManifest::start("export-plots").param("l_max", inputs.l_max);
    let mut written = Vec::new();
    if let Some(d) = inputs.dataset {
        manifest.input(d)?;
        let p = out_dir.join("scatter.csv");
        write_scatter(&p, &read_dataset(d)?)?;
        written.push(p);
    }
    if let Some(dir) = inputs.models {
        let models = load_models(dir)?;
        for (name, m) in [("band_product.csv", &models.product), ("band_risk.csv", &models.risk)] {
            let p = out_dir.join(name);
            write_band(&p, m, inputs.l_max)?;
            written.push(p);
        }
    }
    if let Some(r) = inputs.results {
        manifest.input(r)?;
        let p = out_dir.join("tlim_curve.csv");
        write_tlim_curve(&p, &ResultFile::load(r)?)?;
        written.push(p);
    }
    if let Some((scene, l, seed)) = &inputs.trace {
        manifest.seeds.push(*seed);
        manifest.scene_sha256 = Some(scene.digest());
        let p = out_dir.join("trial_trace.csv");
        write_trial_trace(&p, scene, l, *seed)?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(Error::Argument(
            "nothing to export: give a dataset, models, results or a trace".into(),
        ));
    }
    manifest.finish(&written)?;
    Ok(written)
}

// ---------------------------------------------------------------------------
// replay

/// Writes the scripted interaction trace as CSV and its summary as JSON.
pub fn cmd_replay(scene_spec: &str, cfg: &ReplayConfig, out: &Path) -> Result<ReplayReport> {
    let scene = load_scene(scene_spec)?;
    let mut manifest = RunManifest::start("replay")
        .param("scene", scene_spec)
        .param("replay", cfg);
    manifest.scene_sha256 = Some(scene.digest());
    let rep = run_replay(&scene, cfg)?;
    let mut w = csv_writer(out)?;
    csv_row(
        &mut w,
        out,
        &[
            "time",
            "recovery.x",
            "recovery.y",
            "recovery.z",
            "manufacturing.x",
            "manufacturing.y",
            "manufacturing.z",
        ]
        .map(String::from),
    )?;
    for k in 0..rep.time.len() {
        let (r, m) = (rep.recovery[k], rep.manufacturing[k]);
        csv_row(&mut w, out, &[rep.time[k], r[0], r[1], r[2], m[0], m[1], m[2]].map(fmt))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    let summary = out.with_extension("summary.json");
    write_json(
        &summary,
        &serde_json::json!({
            "episodes": rep.episodes,
            "min_pair_distance": rep.min_pair_distance,
            "final_errors": rep.final_errors,
        }),
    )?;
    manifest.finish(&[out.to_path_buf(), summary])?;
    Ok(rep)
}
