//! Two-phase training: pretrain on all traffic, then fine-tune on cold-video
//! traffic, both with Adagrad.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Impression;
use crate::exec::Execution;
use crate::graph::{HeteroGraph, VideoId};
use crate::model::{AblationMask, BatchGrads, DenseParams, FeatureStore, Featurizer, Model, ModelConfig, Sample, Table, TransferInput, UserRecord};
use crate::sampler::{sample_all, ComputationGraph, NeighborStore};
use crate::{Error, Result};

/// Read-only inputs shared by training, evaluation and serving.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub store: FeatureStore,
    pub neighbors: HashMap<VideoId, ComputationGraph>,
    pub cold: BTreeSet<VideoId>,
}

impl Corpus {
    /// Samples every cold video's computation graph from `graph`.
    pub fn from_graph(
        graph: &HeteroGraph,
        users: impl IntoIterator<Item = (u64, UserRecord)>,
        k: usize,
        exec: Execution,
    ) -> Result<Self> {
        let neighbors = sample_all(graph, k, exec)?.into_iter().map(|cg| (cg.target, cg)).collect();
        Ok(Corpus { store: FeatureStore::from_graph(graph, users), neighbors, cold: graph.cold_videos().collect() })
    }

    /// Uses a pre-sampled neighbor store.
    pub fn with_store(
        graph: &HeteroGraph,
        users: impl IntoIterator<Item = (u64, UserRecord)>,
        store: &NeighborStore,
    ) -> Result<Self> {
        let neighbors = store.iter().map(|cg| cg.map(|cg| (cg.target, cg))).collect::<Result<_>>()?;
        Ok(Corpus { store: FeatureStore::from_graph(graph, users), neighbors, cold: graph.cold_videos().collect() })
    }

    pub fn is_cold(&self, v: VideoId) -> bool {
        self.cold.contains(&v)
    }
}

/// Turns impressions into model samples under one ablation mask, caching the
/// per-target transfer input.
pub struct Assembler {
    featurizer: Featurizer,
    transfers: HashMap<VideoId, TransferInput>,
    empty: TransferInput,
    mask: AblationMask,
}

impl Assembler {
    pub fn new(model: &Model, corpus: &Corpus, mask: AblationMask) -> Self {
        let featurizer = Featurizer::new(model, &corpus.store);
        let transfers = corpus.neighbors.iter().map(|(&v, cg)| (v, featurizer.transfer(Some(cg), &mask))).collect();
        let empty = featurizer.transfer(None, &mask);
        Assembler { featurizer, transfers, empty, mask }
    }

    pub fn sample(&self, imp: &Impression) -> Sample {
        let t = self.transfers.get(&imp.target).unwrap_or(&self.empty).clone();
        self.featurizer.assemble(imp, t, &self.mask)
    }

    pub fn samples<'a>(&self, imps: impl IntoIterator<Item = &'a Impression>) -> Vec<Sample> {
        imps.into_iter().map(|i| self.sample(i)).collect()
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub mask: AblationMask,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 512,
            epochs: 1,
            epsilon: 1e-8,
            seed: 0,
            mask: AblationMask::NONE,
            max_steps: None,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be finite and nonnegative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
}

impl TrainReport {
    /// Mean step loss per epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for s in &self.steps {
            if sums.len() <= s.epoch {
                sums.resize(s.epoch + 1, (0.0, 0));
            }
            sums[s.epoch].0 += s.loss;
            sums[s.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
    }

    /// Metrics log: `step<TAB>epoch<TAB>loss`.
    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step\tepoch\tloss\n");
        for s in &self.steps {
            writeln!(out, "{}\t{}\t{}", s.step, s.epoch, s.loss).expect("string write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn check_finite(name: &str, xs: impl IntoIterator<Item = f64>) -> Result<()> {
    match xs.into_iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFiniteGradient { block: name.to_string(), index }),
        None => Ok(()),
    }
}

fn adagrad_update(theta: &mut [f64], acc: &mut [f64], g: &[f64], lr: f64, eps: f64) {
    for ((t, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
        *a += g * g;
        *t -= lr * g / (a.sqrt() + eps);
    }
}

/// One Adagrad update. Embedding rows absent from `grads` are left alone.
/// Nothing is modified when any gradient is non-finite or mis-shaped.
pub fn adagrad_step(model: &mut Model, grads: &BatchGrads, lr: f64, eps: f64) -> Result<()> {
    let layout = DenseParams::layout(&model.config);
    let blocks = grads.dense.blocks();
    if blocks.len() != layout.len() {
        return Err(Error::Shape { block: "dense".into(), detail: "gradient block count".into() });
    }
    for ((name, r, c), g) in layout.iter().zip(&blocks) {
        if g.dim() != (*r, *c) {
            return Err(Error::Shape { block: name.clone(), detail: format!("gradient is {:?}", g.dim()) });
        }
        check_finite(name, g.iter().copied())?;
    }
    for t in Table::ALL {
        let table = model.table(t);
        for (&row, g) in &grads.sparse.tables[t as usize] {
            if row as usize >= table.weights.nrows() || g.len() != table.dim() {
                return Err(Error::Shape { block: t.name().into(), detail: format!("gradient row {row}") });
            }
            check_finite(&format!("{}[{row}]", t.name()), g.iter().copied())?;
        }
    }

    let params = model.dense.blocks_mut();
    let accs = model.dense_accum.blocks_mut();
    for ((p, a), g) in params.into_iter().zip(accs).zip(&blocks) {
        let g = g.as_standard_layout();
        adagrad_update(
            p.as_slice_mut().expect("owned blocks are contiguous"),
            a.as_slice_mut().expect("owned blocks are contiguous"),
            g.as_slice().expect("standard layout"),
            lr,
            eps,
        );
    }
    for t in Table::ALL {
        let table = model.table_mut(t);
        let d = table.dim();
        for (&row, g) in &grads.sparse.tables[t as usize] {
            let s = row as usize * d;
            let w = &mut table.weights.as_slice_mut().expect("contiguous")[s..s + d];
            let a = &mut table.accum.as_slice_mut().expect("contiguous")[s..s + d];
            adagrad_update(w, a, g, lr, eps);
        }
    }
    Ok(())
}

fn run_phase(mut model: Model, corpus: &Corpus, data: &[Impression], cfg: &TrainConfig, salt: u64) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let asm = Assembler::new(&model, corpus, cfg.mask);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if report.steps.len() >= limit {
                break 'epochs;
            }
            let samples = asm.samples(chunk.iter().map(|&i| &data[i]));
            let grads = model.gradients(&samples, cfg.exec);
            adagrad_step(&mut model, &grads, cfg.learning_rate, cfg.epsilon)?;
            let step = report.steps.len();
            log::debug!("epoch {epoch} step {step} loss {:.5}", grads.loss);
            report.steps.push(StepLog { step, epoch, loss: grads.loss });
        }
        if let Some(l) = report.epoch_losses().last() {
            log::info!("epoch {epoch}: mean loss {l:.5}");
        }
    }
    Ok((model, report))
}

const PRETRAIN_SALT: u64 = 0x5052_4554;
const FINETUNE_SALT: u64 = 0x4649_4e45;

/// Trains `model` on all traffic.
pub fn pretrain(model: Model, corpus: &Corpus, d_full: &[Impression], cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    if d_full.is_empty() {
        return Err(Error::Invalid("pretraining dataset is empty".into()));
    }
    let cold = d_full.iter().filter(|i| corpus.is_cold(i.target)).count();
    if cold == 0 || cold == d_full.len() {
        log::warn!("pretraining data has {cold} cold of {} impressions; expected a mix", d_full.len());
    }
    run_phase(model, corpus, d_full, cfg, PRETRAIN_SALT)
}

/// Continues training a pretrained model on cold-video traffic only. Every
/// parameter keeps training.
pub fn finetune(
    model: Model,
    expected: &ModelConfig,
    corpus: &Corpus,
    d_cold: &[Impression],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    model.check_config(expected)?;
    if let Some(w) = d_cold.iter().find(|i| !corpus.is_cold(i.target)) {
        return Err(Error::Invalid(format!("impression {} targets warm video {}", w.id, w.target)));
    }
    run_phase(model, corpus, d_cold, cfg, FINETUNE_SALT)
}

/// Checks that every impression of `sub` also appears in `full`, by id.
pub fn check_subset(sub: &[Impression], full: &[Impression]) -> Result<()> {
    let ids: HashSet<u64> = full.iter().map(|i| i.id).collect();
    match sub.iter().find(|i| !ids.contains(&i.id)) {
        Some(i) => Err(Error::Invalid(format!("impression {} is not part of the full dataset", i.id))),
        None => Ok(()),
    }
}

/// Click probabilities for `imps` under `mask`, in input order.
pub fn predict_all(model: &Model, corpus: &Corpus, imps: &[Impression], mask: AblationMask, exec: Execution) -> Vec<f64> {
    let asm = Assembler::new(model, corpus, mask);
    let mut out = Vec::with_capacity(imps.len());
    for chunk in imps.chunks(1024) {
        out.extend(model.predict(&asm.samples(chunk), exec));
    }
    out
}
