//! Batches of trials, dataset collection and the benchmark modes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priority::PriorityPolicy;
use crate::seed::{derive_seed, stream};

use super::scene::SceneConfig;
use super::trial::{TrialOptions, TrialResult, TrialSequence};

/// One dataset row plus batch statistics that are not written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub thresholds: Vec<f64>,
    /// Mean number of manufacturing tasks (all robots) per recovery task.
    pub x_product: f64,
    /// Mean recovery-task duration (s).
    pub x_risk: f64,
    pub n_trials: usize,
    pub discarded: usize,
    pub seed: u64,
    #[serde(default)]
    pub product_sd: f64,
    #[serde(default)]
    pub risk_sd: f64,
    #[serde(default)]
    pub min_pair_distance: Option<f64>,
    #[serde(default)]
    pub hard_failures: usize,
}

/// A batch record together with the completed trials behind it.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub record: SampleRecord,
    pub trials: Vec<TrialResult>,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `n_trials` completed trials with the distance-threshold rule.
pub fn run_batch(scene: &SceneConfig, thresholds: &[f64], n_trials: usize, seed: u64) -> Result<SampleRecord> {
    Ok(run_batch_with(scene, thresholds, n_trials, seed, &TrialOptions::default())?.record)
}

/// All trials of a batch run back to back in one workspace (see
/// [`TrialSequence`]). A deadlocked task is discarded and the object is
/// relocated; more deadlocks than requested trials is a scene
/// configuration error.
pub fn run_batch_with(
    scene: &SceneConfig,
    thresholds: &[f64],
    n_trials: usize,
    seed: u64,
    opts: &TrialOptions,
) -> Result<BatchOutcome> {
    if n_trials == 0 {
        return Err(Error::Argument("n_trials must be at least 1".into()));
    }
    let mut seq = TrialSequence::new(scene, thresholds, seed, opts)?;
    let mut trials = Vec::with_capacity(n_trials);
    let mut discarded = 0usize;
    while trials.len() < n_trials {
        let r = seq.next_trial()?;
        if r.deadlocked {
            discarded += 1;
            if discarded > n_trials {
                return Err(Error::Deadlock {
                    deadlocked: discarded,
                    attempted: discarded + trials.len(),
                });
            }
        } else {
            trials.push(r);
        }
    }
    let (x_product, product_sd) = mean_sd(trials.iter().map(|t| f64::from(t.total_tasks())));
    let (x_risk, risk_sd) = mean_sd(trials.iter().map(|t| t.risk_time));
    let record = SampleRecord {
        thresholds: thresholds.to_vec(),
        x_product,
        x_risk,
        n_trials,
        discarded,
        seed,
        product_sd,
        risk_sd,
        min_pair_distance: trials.iter().filter_map(|t| t.min_pair_distance).reduce(f64::min),
        hard_failures: trials.iter().filter(|t| t.hard_failure).count(),
    };
    Ok(BatchOutcome { record, trials })
}

/// Thresholds of sample `index`, drawn from U(0, l_max) per robot.
pub fn sample_thresholds(scene: &SceneConfig, n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::THRESHOLDS));
    let l_max = scene.l_max();
    (0..n_samples)
        .map(|_| {
            (0..scene.n_manufacturing())
                .map(|_| rng.random::<f64>() * l_max)
                .collect()
        })
        .collect()
}

/// Batch seed shared by every row of the dataset rooted at `seed`: all
/// rows see the same drop sequence, so rows differ only by their thresholds.
pub fn sample_seed(seed: u64) -> u64 {
    derive_seed(seed, stream::BATCH)
}

/// Draw `n_samples` threshold vectors and run a batch for each; `sink`
/// sees every record as soon as it is complete.
pub fn collect_dataset(
    scene: &SceneConfig,
    n_samples: usize,
    n_trials: usize,
    seed: u64,
    sink: &mut dyn FnMut(&SampleRecord) -> Result<()>,
) -> Result<Vec<SampleRecord>> {
    if n_samples == 0 {
        return Err(Error::Argument("n_samples must be at least 1".into()));
    }
    let thresholds = sample_thresholds(scene, n_samples, seed);
    let mut out = Vec::with_capacity(n_samples);
    // Batches are sequential inside; run one per worker and keep the sink in row order.
    let wave = rayon::current_num_threads().max(1);
    let batch_seed = sample_seed(seed);
    for chunk in thresholds.chunks(wave) {
        let records: Vec<SampleRecord> = chunk
            .par_iter()
            .map(|l| run_batch(scene, l, n_trials, batch_seed))
            .collect::<Result<_>>()?;
        for rec in records {
            log::info!(
                "sample {}/{}: X_product {:.3}, X_risk {:.3} s",
                out.len() + 1,
                n_samples,
                rec.x_product,
                rec.x_risk
            );
            sink(&rec)?;
            out.push(rec);
        }
    }
    Ok(out)
}

/// The three reference processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkMode {
    /// Manufacturing stops while the recovery robot works.
    NonContinuous,
    /// p ≡ 1
    AlwaysRecovery,
    /// p ≡ 0
    AlwaysManufacturing,
}

impl BenchmarkMode {
    pub const ALL: [BenchmarkMode; 3] = [
        BenchmarkMode::NonContinuous,
        BenchmarkMode::AlwaysRecovery,
        BenchmarkMode::AlwaysManufacturing,
    ];

    pub fn options(self) -> TrialOptions {
        match self {
            BenchmarkMode::NonContinuous => TrialOptions {
                non_continuous: true,
                ..TrialOptions::default()
            },
            BenchmarkMode::AlwaysRecovery => TrialOptions {
                policy: PriorityPolicy::AlwaysRecovery,
                ..TrialOptions::default()
            },
            BenchmarkMode::AlwaysManufacturing => TrialOptions {
                policy: PriorityPolicy::AlwaysManufacturing,
                ..TrialOptions::default()
            },
        }
    }

    /// Whether the mode has a meaningful productivity figure.
    pub fn has_productivity(self) -> bool {
        self != BenchmarkMode::NonContinuous
    }

    pub fn label(self) -> &'static str {
        match self {
            BenchmarkMode::NonContinuous => "non-continuous",
            BenchmarkMode::AlwaysRecovery => "always-recovery",
            BenchmarkMode::AlwaysManufacturing => "always-manufacturing",
        }
    }

    /// Nominal thresholds the mode corresponds to.
    fn thresholds(self, scene: &SceneConfig) -> Vec<f64> {
        let l = match self {
            BenchmarkMode::AlwaysManufacturing => scene.l_max(),
            _ => 0.0,
        };
        vec![l; scene.n_manufacturing()]
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub mode: BenchmarkMode,
    pub outcome: BatchOutcome,
}

/// All modes on the same trial seeds.
pub fn benchmark_modes(scene: &SceneConfig, n_trials: usize, seed: u64) -> Result<Vec<BenchmarkRow>> {
    BenchmarkMode::ALL
        .iter()
        .map(|&mode| {
            let outcome = run_batch_with(scene, &mode.thresholds(scene), n_trials, seed, &mode.options())?;
            Ok(BenchmarkRow { mode, outcome })
        })
        .collect()
}

pub const DATASET_HEADER: &str = "# mprio-dataset v1";

/// Columns after the `l1..lN` threshold columns.
pub const DATASET_COLUMNS: [&str; 9] = [
    "x_product",
    "x_risk",
    "product_sd",
    "risk_sd",
    "min_pair_distance",
    "hard_failures",
    "n_trials",
    "discarded",
    "seed",
];

/// Appends dataset rows, flushing after each one.
pub struct DatasetWriter<W: Write> {
    inner: W,
    n_m: usize,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, n_m: usize) -> std::io::Result<Self> {
        writeln!(inner, "{DATASET_HEADER}")?;
        let mut cols: Vec<String> = (1..=n_m).map(|i| format!("l{i}")).collect();
        cols.extend(DATASET_COLUMNS.iter().map(|s| s.to_string()));
        writeln!(inner, "{}", cols.join(","))?;
        inner.flush()?;
        Ok(DatasetWriter { inner, n_m })
    }

    pub fn append(&mut self, rec: &SampleRecord) -> std::io::Result<()> {
        assert_eq!(rec.thresholds.len(), self.n_m, "threshold count fixed per dataset");
        let mut cols: Vec<String> = rec.thresholds.iter().map(|v| v.to_string()).collect();
        cols.push(rec.x_product.to_string());
        cols.push(rec.x_risk.to_string());
        cols.push(rec.product_sd.to_string());
        cols.push(rec.risk_sd.to_string());
        cols.push(rec.min_pair_distance.map_or(String::new(), |d| d.to_string()));
        cols.push(rec.hard_failures.to_string());
        cols.push(rec.n_trials.to_string());
        cols.push(rec.discarded.to_string());
        cols.push(rec.seed.to_string());
        writeln!(self.inner, "{}", cols.join(","))?;
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub fn create_dataset(path: &Path, n_m: usize) -> Result<DatasetWriter<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    DatasetWriter::new(BufWriter::new(file), n_m).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let n_m = records.first().map_or(0, |r| r.thresholds.len());
    let mut w = create_dataset(path, n_m)?;
    for r in records {
        w.append(r).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    if first.trim_end() != DATASET_HEADER {
        return Err(Error::parse(
            path,
            format!("expected `{DATASET_HEADER}` on the first line"),
        ));
    }
    let mut csv = csv::ReaderBuilder::new().from_reader(reader);
    let headers = csv.headers().map_err(|e| Error::parse(path, e))?.clone();
    let n_m = headers.iter().take_while(|h| h.starts_with('l')).count();
    let expected: Vec<String> = (1..=n_m)
        .map(|i| format!("l{i}"))
        .chain(DATASET_COLUMNS.map(String::from))
        .collect();
    if n_m == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::parse(path, format!("unexpected columns {headers:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in csv.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let bad = |col: usize| Error::parse(path, format!("row {}: bad `{}`", row + 1, &headers[col]));
        let f = |col: usize| rec[col].parse::<f64>().map_err(|_| bad(col));
        let u = |col: usize| rec[col].parse::<u64>().map_err(|_| bad(col));
        out.push(SampleRecord {
            thresholds: (0..n_m).map(f).collect::<Result<_>>()?,
            x_product: f(n_m)?,
            x_risk: f(n_m + 1)?,
            product_sd: f(n_m + 2)?,
            risk_sd: f(n_m + 3)?,
            min_pair_distance: match &rec[n_m + 4] {
                "" => None,
                _ => Some(f(n_m + 4)?),
            },
            hard_failures: u(n_m + 5)? as usize,
            n_trials: u(n_m + 6)? as usize,
            discarded: u(n_m + 7)? as usize,
            seed: u(n_m + 8)?,
        });
    }
    Ok(out)
}
