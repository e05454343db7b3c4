use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::equilibrium::{solve_post_merger_equilibrium, solve_pre_merger_equilibrium};
use super::generator::{generate_market, HarnessConfig};
use super::primitives::{DemandModel, SyntheticPrimitives};
use crate::effects::{cmcr, guppi};
use crate::error::{Error, Result};
use crate::market::{MergerSpec, ProductId};

/// One merging product in one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub model: DemandModel,
    pub n_products: usize,
    pub product_id: ProductId,
    pub guppi: f64,
    /// GUPPI-based prediction with identity pass-through.
    pub predicted_pdd: f64,
    pub true_pdd: f64,
    pub cmcr: f64,
    pub pre_residual: f64,
    pub post_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial_id: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HarnessSummary {
    pub model: DemandModel,
    pub seed: u64,
    pub n_markets: usize,
    pub n_failed: usize,
    pub n_records: usize,
    /// Share of merging products whose true price change is at least the prediction.
    pub fraction_true_ge_predicted: f64,
    /// Median of `|predicted - true| / true`.
    pub median_relative_error: f64,
    pub mean_true_pdd: f64,
    pub mean_predicted_pdd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub summary: HarnessSummary,
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
}

pub const CSV_HEADER: [&str; 8] = [
    "trial_id",
    "model",
    "n_products",
    "product_id",
    "guppi",
    "predicted_pdd",
    "true_pdd",
    "cmcr",
];

impl ExperimentResult {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::invalid(format!("writing CSV: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.trial_id.to_string(),
                r.model.to_string(),
                r.n_products.to_string(),
                r.product_id.to_string(),
                r.guppi.to_string(),
                r.predicted_pdd.to_string(),
                r.true_pdd.to_string(),
                r.cmcr.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("writing CSV: {e}")))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// The merger every trial studies: the first two firms.
pub fn trial_merger(prim: &SyntheticPrimitives) -> MergerSpec {
    MergerSpec::new(prim.owners[0].as_str(), prim.owners[1].as_str())
}

/// Deterministic per-trial generator: the experiment seed with the trial as stream.
pub fn trial_rng(seed: u64, trial_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_id);
    rng
}

/// Solves one trial and returns one record per merging product.
pub fn run_trial(prim: &SyntheticPrimitives, trial_id: u64) -> Result<Vec<TrialRecord>> {
    let merger = trial_merger(prim);
    let pre = solve_pre_merger_equilibrium(prim)?;
    let market = pre.market(prim)?;
    let diversion = pre.revenue_diversion(prim)?;
    let g = guppi(&market, &diversion, &merger)?;
    let c = cmcr(&market, &diversion, &merger)?;
    let post = solve_post_merger_equilibrium(prim, &merger, &pre)?;
    Ok(prim
        .products
        .iter()
        .enumerate()
        .filter(|(j, _)| merger.is_merging(&prim.owners[*j]))
        .map(|(j, id)| TrialRecord {
            trial_id,
            model: prim.model(),
            n_products: prim.len(),
            product_id: id.clone(),
            guppi: g[id],
            predicted_pdd: g[id],
            true_pdd: post.p_dd[j],
            cmcr: c.cmcr[id],
            pre_residual: pre.residual_norm,
            post_residual: post.equilibrium.residual_norm,
        })
        .collect())
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn threads(config: &HarnessConfig) -> Option<usize> {
    config
        .threads
        .or_else(|| std::env::var("UPPKIT_THREADS").ok().and_then(|v| v.parse().ok()))
        .filter(|n| *n > 0)
}

/// Runs `n_markets` independent trials in parallel. Output depends only on the config.
pub fn run_accuracy_experiment(config: &HarnessConfig) -> Result<ExperimentResult> {
    config.check()?;
    let work = || {
        (0..config.n_markets as u64)
            .into_par_iter()
            .map(|t| {
                let prim = generate_market(config, &mut trial_rng(config.seed, t));
                run_trial(&prim, t).map_err(|e| TrialFailure {
                    trial_id: t,
                    reason: e.to_string(),
                })
            })
            .collect::<Vec<_>>()
    };
    let outcomes = match threads(config) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.extend(r),
            Err(f) => {
                log::warn!("trial {} discarded: {}", f.trial_id, f.reason);
                failures.push(f);
            }
        }
    }
    let n = records.len() as f64;
    let summary = HarnessSummary {
        model: config.model,
        seed: config.seed,
        n_markets: config.n_markets,
        n_failed: failures.len(),
        n_records: records.len(),
        fraction_true_ge_predicted: records.iter().filter(|r| r.true_pdd >= r.predicted_pdd).count() as f64 / n,
        median_relative_error: median(
            records.iter().map(|r| ((r.predicted_pdd - r.true_pdd) / r.true_pdd).abs()).collect(),
        ),
        mean_true_pdd: records.iter().map(|r| r.true_pdd).sum::<f64>() / n,
        mean_predicted_pdd: records.iter().map(|r| r.predicted_pdd).sum::<f64>() / n,
    };
    Ok(ExperimentResult {
        summary,
        records,
        failures,
    })
}
