use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Adam, Tensor};
use crate::boxes::crop_resize;
use crate::dataset::{generate_synthetic, load_dataset, split_dataset, BoundingBox, Dataset, Splits};
use crate::error::{Error, Result};
use crate::objectives::LossWeights;
use crate::rng::{indexed_stream, stream, Rng, Stream};
use crate::tpan::{Mode, PrototypeTable, TpsModel};

use super::step::{forward_backward, Sample, Targets};
use super::RunConfig;

/// The corpus named by the config, or the synthetic one.
pub fn load_corpus(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.corpus {
        Some(dir) => load_dataset(dir),
        None => generate_synthetic(&cfg.synth, cfg.data_seed),
    }
}

pub fn prepare_splits(cfg: &RunConfig) -> Result<Splits> {
    split_dataset(&load_corpus(cfg)?, cfg.data_seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub id: f64,
    pub mh: f64,
    pub guide: f64,
    pub total: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,epoch,L_ID,L_MH,L_guide,total\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.step, r.epoch, r.id, r.mh, r.guide, r.total)
            .expect("write to string");
    }
    out
}

/// Model, prototype table and optimiser: everything a checkpoint holds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: TpsModel,
    pub table: PrototypeTable,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn init(cfg: &RunConfig, vocab: usize, num_identities: usize) -> Result<Self> {
        let model = TpsModel::new(
            cfg.model.clone(),
            vocab,
            num_identities,
            &mut stream(cfg.seed, Stream::Init),
        )?;
        Ok(Self {
            table: PrototypeTable::new(num_identities, cfg.model.dim, cfg.train.lambda)?,
            model,
            optimizer: Adam {
                weight_decay: cfg.train.weight_decay,
                ..Adam::new(cfg.train.lr)
            },
            epoch: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRow>,
    /// tpan-mode samples guided by their own caption because the prototype
    /// row was still empty.
    pub fallbacks: usize,
    pub skipped_batches: usize,
}

/// Training pairs of a split: one per caption.
struct Pairs<'a> {
    data: &'a Dataset,
    items: Vec<(usize, BoundingBox, usize)>,
    cached: Vec<Tensor>,
}

impl<'a> Pairs<'a> {
    fn new(data: &'a Dataset, cfg: &RunConfig) -> Result<Self> {
        let mut items = Vec::with_capacity(data.captions.len());
        for (ci, c) in data.captions.iter().enumerate() {
            let (si, b) = data.resolve(&c.box_ref).ok_or_else(|| {
                Error::record(format!("caption {ci}"), "dangling reference")
            })?;
            items.push((si, *b, c.identity));
        }
        let cached = items
            .iter()
            .map(|(si, b, _)| {
                crop_resize(&data.scenes[*si], b, cfg.model.crop_height, cfg.model.crop_width)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            data,
            items,
            cached,
        })
    }

    fn sample(&self, i: usize, cfg: &RunConfig, rng: &mut Rng) -> Result<Sample> {
        let (si, b, label) = self.items[i];
        let t = &cfg.train;
        let mut patch = if t.box_jitter > 0.0 {
            let mut n = || -> f64 { StandardNormal.sample(&mut *rng) };
            let (dx, dy, ds) = (n(), n(), n());
            let s = (0.5 * t.box_jitter * ds).exp();
            let (cx, cy) = b.center();
            let (w, h) = (b.w * s, b.h * s);
            let moved = BoundingBox {
                x: cx + dx * t.box_jitter * b.w - 0.5 * w,
                y: cy + dy * t.box_jitter * b.h - 0.5 * h,
                w,
                h,
                ..b
            };
            let scene = &self.data.scenes[si];
            match moved.clamped(scene.width, scene.height) {
                Some(m) => crop_resize(scene, &m, cfg.model.crop_height, cfg.model.crop_width)?,
                None => self.cached[i].clone(),
            }
        } else {
            self.cached[i].clone()
        };
        if t.flip_prob > 0.0 && rng.random::<f64>() < t.flip_prob {
            patch = mirror(&patch);
        }
        Ok(Sample {
            patch,
            tokens: self.data.captions[i].tokens.clone(),
            label,
        })
    }

    /// Caption indices grouped `samples_per_id` at a time per identity,
    /// groups shuffled, then packed `ids_per_batch` groups per batch.
    fn batches(&self, cfg: &RunConfig, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = indexed_stream(cfg.seed, Stream::Shuffle, epoch as u64);
        let mut by_id: Vec<Vec<usize>> = vec![Vec::new(); self.data.num_identities];
        for (i, &(_, _, label)) in self.items.iter().enumerate() {
            by_id[label].push(i);
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for mut list in by_id {
            list.shuffle(&mut rng);
            groups.extend(list.chunks(cfg.train.samples_per_id).map(<[usize]>::to_vec));
        }
        groups.shuffle(&mut rng);
        groups
            .chunks(cfg.train.ids_per_batch)
            .map(|gs| gs.concat())
            .collect()
    }
}

fn mirror(p: &Tensor) -> Tensor {
    let &[c, h, w] = p.shape() else {
        return p.clone();
    };
    let d = p.data();
    let mut out = vec![0.0; d.len()];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ci * h + y) * w + x] = d[(ci * h + y) * w + (w - 1 - x)];
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("same shape")
}

/// Trains from scratch on `data` for `cfg.train.epochs` epochs.
pub fn train(cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    let state = TrainState::init(cfg, data.vocab.len(), data.num_identities)?;
    train_from(cfg, data, state)
}

/// Continues training `state` up to `cfg.train.epochs` epochs.
pub fn train_from(cfg: &RunConfig, data: &Dataset, mut state: TrainState) -> Result<TrainOutcome> {
    cfg.check()?;
    if data.num_identities < 2 {
        return Err(Error::Invalid("training needs at least two identities".into()));
    }
    let pairs = Pairs::new(data, cfg)?;
    let mut log = Vec::new();
    let mut fallbacks = 0;
    let mut skipped = 0;
    let mut step = state.optimizer.state.step as usize;
    while state.epoch < cfg.train.epochs {
        let epoch = state.epoch;
        state.optimizer.lr = if epoch >= cfg.train.lr_decay_epoch {
            cfg.train.lr * 0.1
        } else {
            cfg.train.lr
        };
        let weights = if epoch < cfg.train.guide_warmup {
            LossWeights {
                guide: 0.0,
                ..cfg.train.loss_weights
            }
        } else {
            cfg.train.loss_weights
        };
        let mut aug = indexed_stream(cfg.seed, Stream::Augment, epoch as u64);
        for batch in pairs.batches(cfg, epoch) {
            let samples = batch
                .iter()
                .map(|&i| pairs.sample(i, cfg, &mut aug))
                .collect::<Result<Vec<_>>>()?;
            let first = samples[0].label;
            if samples.iter().all(|s| s.label == first) {
                skipped += 1;
                continue;
            }
            state.model.zero_grads();
            let out = forward_backward(
                &mut state.model,
                &samples,
                Targets::Live {
                    mode: cfg.mode,
                    table: Some(&state.table),
                },
                cfg.train.margin,
                &weights,
            )
            .map_err(|e| Error::Invalid(format!("epoch {epoch}, step {step}: {e}")))?;
            state.optimizer.step(&mut state.model.params_mut())?;
            if cfg.mode == Mode::Tpan {
                for (s, f) in samples.iter().zip(&out.text_features) {
                    state.table.update(s.label, f)?;
                }
            }
            fallbacks += out.fallbacks;
            step += 1;
            log.push(LogRow {
                step,
                epoch,
                id: out.id,
                mh: out.mh,
                guide: out.guide,
                total: out.total,
            });
        }
        state.epoch += 1;
        log::debug!("epoch {} done, last loss {:?}", state.epoch, log.last().map(|r| r.total));
    }
    Ok(TrainOutcome {
        state,
        log,
        fallbacks,
        skipped_batches: skipped,
    })
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    std::fs::write(path, log_csv(rows)).map_err(|e| Error::io(path, e))
}
