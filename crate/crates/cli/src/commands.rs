use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use statediff::analysis::{
    conditional_variance, error_propagation_mc, evaluate_sample_bound, evaluate_mode_bound, measure_fit, BoundInputs,
    BoundReport,
};
use statediff::checkpoint;
use statediff::gradcheck::{self, GradCheckReport};
use statediff::model::{self, LatentDiffusionModel, ModelDims, TrainHistory};
use statediff::net::{Activation, Network};
use statediff::rng;
use statediff::synth::{Dataset, Sample};

use crate::config::RunConfig;
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Dataset, CliError> {
    let data = Dataset::generate(&cfg.task_spec(), cfg.n_pairs, cfg.seed)?;
    let mut w = create(out)?;
    data.write_jsonl(&mut w)?;
    Ok(data)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::read_jsonl(open(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// History CSV columns: `epoch,mse,kl,total`.
pub fn write_history(history: &TrainHistory, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "epoch,mse,kl,total").map_err(io)?;
    for r in &history.records {
        writeln!(w, "{},{},{},{}", r.epoch, r.mse, r.kl, r.total).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Trains and writes the checkpoint to `out` and the history to
/// `out.history.csv`. If training hits a non-finite loss, the parameters
/// from before the failing batch are still saved.
pub fn train(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<(LatentDiffusionModel, TrainHistory), CliError> {
    let model_cfg = cfg.model_config();
    let want = model_cfg.dims;
    if data.meta.dims.state != want.state || data.meta.dims.cond != want.cond {
        return Err(CliError::config(format!(
            "dataset dims (state {}, cond {}) do not match the config (state {}, cond {})",
            data.meta.dims.state, data.meta.dims.cond, want.state, want.cond
        )));
    }
    let mut model = LatentDiffusionModel::new(&model_cfg)?;
    let result = model::train(&mut model, &data.pairs, &cfg.train_config());
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    checkpoint::save_model(&model, out)?;
    let history = result?;
    write_history(&history, &sibling(out, ".history.csv"))?;
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub x: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct XRecord {
    x: Vec<f64>,
}

/// One `{"x":[...]}` object per non-blank line.
pub fn read_conditions(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: XRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::config(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push(rec.x);
    }
    Ok(out)
}

/// Condition `i` is sampled with seed `derive_seed(seed, "sample-x", i)`.
pub fn sample_conditions(
    model: &LatentDiffusionModel,
    xs: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<Vec<SampleRecord>, CliError> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let samples = model.sample(x, n, rng::derive_seed(seed, "sample-x", i as u64))?;
            Ok(SampleRecord { x: x.clone(), samples })
        })
        .collect()
}

/// Samples as JSON Lines at `out`, and a histogram of the first state
/// coordinate at `out.hist.csv` with columns `x_index,bin_lo,bin_hi,count`.
/// Values outside `[hist_lo, hist_hi)` are not counted.
pub fn write_samples(records: &[SampleRecord], cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut w = create(out)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::config(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(out, e))?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;

    let hist_path = sibling(out, ".hist.csv");
    let io = |e| CliError::io(&hist_path, e);
    let mut h = create(&hist_path)?;
    writeln!(h, "x_index,bin_lo,bin_hi,count").map_err(io)?;
    let bins = cfg.hist_bins.max(1);
    let width = (cfg.hist_hi - cfg.hist_lo) / bins as f64;
    for (i, r) in records.iter().enumerate() {
        let mut counts = vec![0usize; bins];
        for s in &r.samples {
            let v = s[0];
            if v >= cfg.hist_lo && v < cfg.hist_hi {
                counts[(((v - cfg.hist_lo) / width) as usize).min(bins - 1)] += 1;
            }
        }
        for (b, c) in counts.iter().enumerate() {
            let lo = cfg.hist_lo + b as f64 * width;
            writeln!(h, "{i},{lo},{},{c}", lo + width).map_err(io)?;
        }
    }
    h.flush().map_err(io)
}

pub fn load_model(path: &Path) -> Result<LatentDiffusionModel, CliError> {
    checkpoint::load_model(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Builds the full bound report at `cfg.eval_x`.
///
/// Streams: model samples `(seed, "verify-model", 0)`, true draws and
/// held-out pairs `(seed, "verify-truth", i)` and `(seed, "verify-fit", i)`,
/// propagation `(seed, "verify-propagation", 0)`.
pub fn verify_bounds(cfg: &RunConfig, model: &LatentDiffusionModel) -> Result<BoundReport, CliError> {
    let task = cfg.task_spec();
    let gmm = task.gmm()?.ok_or_else(|| {
        CliError::config("verify-bounds needs a task with a known mode structure (bimodal or unimodal)")
    })?;
    let x = &cfg.eval_x;
    if x.len() != gmm.cond_dim() {
        return Err(CliError::config(format!(
            "eval_x has {} entries, task conditions have {}",
            x.len(),
            gmm.cond_dim()
        )));
    }
    let n = cfg.eval_samples;
    let seed = cfg.seed;
    let model_samples = model.sample(x, n, rng::derive_seed(seed, "verify-model", 0))?;
    let draw = |tag: &str, i: usize| {
        let mut r = rng::stream(seed, tag, i as u64);
        gmm.sample(x, &mut r).map(|(_, s)| s)
    };
    let truth = (0..n).map(|i| draw("verify-truth", i)).collect::<Result<Vec<_>, _>>()?;
    let held_out = (0..n)
        .map(|i| draw("verify-fit", i).map(|s| Sample { x: x.clone(), s }))
        .collect::<Result<Vec<_>, _>>()?;
    let (delta_sq, eps_kl) = measure_fit(model, &held_out, seed)?;

    let schedule = model.schedule();
    let inputs = BoundInputs {
        c1: schedule.c1(),
        num_steps: schedule.num_steps(),
        delta_sq,
        eps_kl,
        c2: cfg.c2,
    };
    Ok(BoundReport {
        x: x.clone(),
        inputs,
        sample_bound: evaluate_sample_bound(&model_samples, &truth, conditional_variance(&gmm, x), seed)?,
        propagation: error_propagation_mc(
            schedule,
            delta_sq.sqrt(),
            model.dims().state,
            cfg.propagation_trials,
            rng::derive_seed(seed, "verify-propagation", 0),
        )?,
        mode_bound: evaluate_mode_bound(&model_samples, &gmm, x, &inputs)?,
    })
}

pub fn write_report(report: &BoundReport, model: &LatentDiffusionModel, prefix: &Path) -> Result<(), CliError> {
    let csv = sibling(prefix, ".csv");
    let mut w = create(&csv)?;
    writeln!(w, "{}\n{}", BoundReport::csv_header(), report.csv_row()).map_err(|e| CliError::io(&csv, e))?;
    w.flush().map_err(|e| CliError::io(&csv, e))?;
    let txt = sibling(prefix, ".txt");
    let mut w = create(&txt)?;
    write!(
        w,
        "{}\ncheckpoint training stats: delta^2 = {}, KL = {}\n",
        report.text(),
        model.delta_sq(),
        model.eps_kl()
    )
    .map_err(|e| CliError::io(&txt, e))?;
    w.flush().map_err(|e| CliError::io(&txt, e))
}

/// Largest per-layer parameter count `gradcheck` accepts.
pub const GRADCHECK_LAYER_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOutcome {
    pub network: GradCheckReport,
    pub loss: GradCheckReport,
}

/// Finite-difference check of a bare network and of the full loss, on a
/// model built from the `gradcheck_*` settings.
pub fn gradcheck(cfg: &RunConfig, seed: u64) -> Result<GradCheckOutcome, CliError> {
    let dims = ModelDims {
        state: cfg.gradcheck_state_dim,
        cond: cfg.gradcheck_cond_dim,
        latent: cfg.gradcheck_z_dim,
    };
    let (model, batch, noise) = gradcheck::loss_fixture(
        dims,
        cfg.gradcheck_steps,
        cfg.gradcheck_hidden,
        cfg.gradcheck_batch.max(1),
        seed,
    )?;
    let nets = [model.denoiser(), model.prior().net(), model.posterior().net()];
    for net in nets {
        for w in net.layer_dims().windows(2) {
            let count = w[0] * w[1] + w[1];
            if count > GRADCHECK_LAYER_CAP {
                return Err(CliError::config(format!(
                    "gradcheck layer {}x{} has {count} parameters, cap is {GRADCHECK_LAYER_CAP}; shrink the dims",
                    w[0], w[1]
                )));
            }
        }
    }
    let loss = gradcheck::check_model_loss(&model, &batch, &noise, usize::MAX, gradcheck::DEFAULT_STEP)?;

    let net_dims = model.denoiser().layer_dims().to_vec();
    let net = Network::new(&net_dims, Activation::Mish, rng::derive_seed(seed, "gradcheck-net", 0))?
        .with_residual(true);
    let mut r = rng::stream(seed, "gradcheck-net", 1);
    let x = rng::normal_vec(&mut r, net.input_dim());
    let g = rng::normal_vec(&mut r, net.output_dim());
    let network = gradcheck::check_network(&net, &x, &g, usize::MAX, gradcheck::DEFAULT_STEP)?;
    Ok(GradCheckOutcome { network, loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_appends_to_file_name() {
        assert_eq!(sibling(Path::new("a/b.jsonl"), ".hist.csv"), PathBuf::from("a/b.jsonl.hist.csv"));
        assert_eq!(sibling(Path::new("model"), ".csv"), PathBuf::from("model.csv"));
    }

    #[test]
    fn gradcheck_cap_enforced() {
        let cfg = RunConfig {
            gradcheck_hidden: 32,
            ..Default::default()
        };
        assert!(gradcheck(&cfg, 0).is_err());
    }
}
