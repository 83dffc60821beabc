//! Run configuration, training, checkpoints, gradient checks and the
//! train / evaluate / export workflows built on them.

mod checkpoint;
mod config;
mod gradcheck;
mod step;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Record, MAGIC, VERSION};
pub use config::{RunConfig, TrainConfig};
pub use gradcheck::{grad_check_all, hinge_clearance, GradEntry, GradReport, StopGradient, KINKED_TOL, SMOOTH_TOL};
pub use step::{forward_backward, forward_loss, Sample, StepOutput, Targets};
pub use train::{
    load_corpus, log_csv, prepare_splits, train, train_from, write_log, LogRow, TrainOutcome,
    TrainState,
};

use crate::boxes::{crop_resize, JitterDetector};
use crate::dataset::{Dataset, Language, Splits};
use crate::error::{Error, Result};
use crate::eval::{evaluate, rankings_csv, write_report, Evaluation};
use crate::exec::Exec;
use crate::tpan::{target_map, write_attention_maps, Mode};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "eval_report.json";
pub const RANKINGS_FILE: &str = "rankings.csv";

/// The simulated detector used at evaluation time.
pub fn eval_detector(cfg: &RunConfig) -> JitterDetector {
    JitterDetector {
        params: cfg.detector,
        seed: cfg.data_seed,
    }
}

/// Trains on the train split and writes config, checkpoint and loss log to `dir`.
pub fn run_train(cfg: &RunConfig, splits: &Splits, dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outcome = train(cfg, &splits.train)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), cfg, &outcome.state)?;
    write_log(&dir.join(LOG_FILE), &outcome.log)?;
    if outcome.fallbacks > 0 {
        log::info!("{} samples were guided by their own caption before a prototype existed", outcome.fallbacks);
    }
    Ok(outcome)
}

/// Reads back a run directory written by [`run_train`].
pub fn load_run(dir: &Path) -> Result<(RunConfig, TrainState)> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let state = load_checkpoint(&dir.join(CHECKPOINT_FILE), &cfg)?;
    Ok((cfg, state))
}

/// Evaluates on `data` with the configured detector.
pub fn evaluate_state(cfg: &RunConfig, state: &TrainState, data: &Dataset, exec: Exec) -> Result<Evaluation> {
    evaluate(&state.model, data, &eval_detector(cfg), &cfg.eval, exec)
}

/// Evaluates and writes `eval_report.json` and `rankings.csv` into `dir`.
pub fn run_eval(cfg: &RunConfig, state: &TrainState, data: &Dataset, dir: &Path, exec: Exec) -> Result<Evaluation> {
    let ev = evaluate_state(cfg, state, data, exec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_report(&dir.join(REPORT_FILE), &ev.report)?;
    let path = dir.join(RANKINGS_FILE);
    std::fs::write(&path, rankings_csv(&ev, None)).map_err(|e| Error::io(&path, e))?;
    Ok(ev)
}

/// Writes `A` and `Atarget` for up to `limit` annotated boxes of `data`.
///
/// The target comes from the box identity's prototype when the table has
/// one, otherwise from the box's first caption.
pub fn export_attention(state: &TrainState, data: &Dataset, dir: &Path, limit: usize) -> Result<Vec<PathBuf>> {
    let model = &state.model;
    let mut written = Vec::new();
    let mut done = 0;
    for (si, scene) in data.scenes.iter().enumerate() {
        for (bi, b) in data.boxes[si].iter().enumerate() {
            if done == limit {
                return Ok(written);
            }
            let Some(k) = b.identity else { continue };
            let patch = crop_resize(scene, b, model.config.crop_height, model.config.crop_width)?;
            let fwd = model.forward_image(&patch)?;
            let caption = data
                .captions
                .iter()
                .find(|c| c.box_ref.scene_id == scene.id && c.box_ref.box_index == bi);
            let guide = match (data.num_identities == state.table.len())
                .then(|| state.table.row(k))
                .flatten()
            {
                Some(row) => Some(row.to_vec()),
                None => match caption {
                    Some(c) => Some(model.embed_text(&c.tokens)?.into_data()),
                    None => None,
                },
            };
            let target = guide.map(|g| target_map(&g, &fwd.reduced)).transpose()?;
            written.extend(write_attention_maps(dir, &scene.id, bi, &fwd.attention, target.as_ref())?);
            done += 1;
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBox {
    pub scene: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub similarity: f64,
}

/// Ranks the detected boxes of `data` against one free-text query.
pub fn rank_text(
    cfg: &RunConfig,
    state: &TrainState,
    data: &Dataset,
    text: &str,
    top_k: usize,
    exec: Exec,
) -> Result<Vec<RankedBox>> {
    let tokens = data
        .vocab
        .encode(text, Language::Synthetic)
        .map_err(|t| Error::Invalid(format!("query word {t:?} is not in the vocabulary")))?;
    let query = state.model.embed_text(&tokens)?;
    let (gallery, _) = crate::eval::build_gallery(
        &state.model,
        &data.scenes,
        &data.boxes,
        &eval_detector(cfg),
        &cfg.eval,
        exec,
    )?;
    let sims: Vec<f64> = gallery
        .iter()
        .map(|g| g.embedding.iter().zip(query.data()).map(|(a, b)| a * b).sum())
        .collect();
    Ok(crate::eval::rank_by_similarity(&sims)
        .into_iter()
        .take(top_k)
        .map(|i| {
            let b = gallery[i].detection.bbox;
            RankedBox {
                scene: gallery[i].scene_id.clone(),
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                similarity: sims[i],
            }
        })
        .collect())
}

/// Outcome of one train + evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub map: f64,
    pub rank1: f64,
    pub first_loss: f64,
    pub last_loss: f64,
    pub fallbacks: usize,
}

/// Trains and evaluates one configuration in memory.
pub fn train_and_evaluate(cfg: &RunConfig, splits: &Splits) -> Result<(TrainOutcome, Evaluation)> {
    let outcome = train(cfg, &splits.train)?;
    let ev = evaluate_state(cfg, &outcome.state, &splits.test, Exec::Sequential)?;
    Ok((outcome, ev))
}

/// Every (mode, seed) combination of `base`, fanned out through `exec`.
pub fn sweep(base: &RunConfig, splits: &Splits, modes: &[Mode], seeds: &[u64], exec: Exec) -> Result<Vec<RunSummary>> {
    let jobs: Vec<(Mode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    exec.try_map(&jobs, |&(mode, seed)| {
        let cfg = RunConfig {
            mode,
            seed,
            ..base.clone()
        };
        let (outcome, ev) = train_and_evaluate(&cfg, splits)?;
        Ok(RunSummary {
            mode,
            seed,
            map: ev.report.map,
            rank1: ev.report.cmc_at(1).unwrap_or(0.0),
            first_loss: outcome.log.first().map_or(f64::NAN, |r| r.total),
            last_loss: outcome.log.last().map_or(f64::NAN, |r| r.total),
            fallbacks: outcome.fallbacks,
        })
    })
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
