//! Synthetic worlds, metrics and the ablation study.

mod ablation;
mod metrics;
mod synth;

pub use ablation::{run_ablation, AblationReport, AblationRow};
pub use metrics::{compute_auc, rela_impr};
pub use synth::{build_graph, generate_world, SyntheticWorldConfig, World, WORLD_BUILD_TS};

use crate::data::Impression;
use crate::model::{AblationMask, Model, ModelConfig};
use crate::train::{finetune, predict_all, pretrain, Corpus, TrainConfig, TrainReport};
use crate::Result;

/// Everything one train-and-evaluate run needs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub corpus: Corpus,
    pub d_full: Vec<Impression>,
    pub d_cold: Vec<Impression>,
    pub d_test: Vec<Impression>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub mask: AblationMask,
    pub pretrain_auc: f64,
    pub finetune_auc: f64,
    pub pretrained: Model,
    pub finetuned: Model,
    pub pretrain_log: TrainReport,
    pub finetune_log: TrainReport,
}

impl Experiment {
    /// Builds the corpus from a generated world.
    pub fn from_world(
        world: &World,
        semantic_k: usize,
        neighbors_k: usize,
        model: ModelConfig,
        train: TrainConfig,
    ) -> Result<Self> {
        let graph = world.graph(semantic_k, train.exec)?;
        let corpus = Corpus::from_graph(&graph, world.users.iter().cloned(), neighbors_k, train.exec)?;
        Ok(Experiment {
            corpus,
            d_full: world.d_full.clone(),
            d_cold: world.d_cold.clone(),
            d_test: world.d_test.clone(),
            model,
            train,
            pretrain_epochs: 1,
            finetune_epochs: 1,
        })
    }

    /// Test AUC of `model` under `mask`.
    pub fn test_auc(&self, model: &Model, mask: AblationMask) -> Result<f64> {
        let scores = predict_all(model, &self.corpus, &self.d_test, mask, self.train.exec);
        let labels: Vec<bool> = self.d_test.iter().map(|i| i.label).collect();
        compute_auc(&scores, &labels)
    }

    /// Pretrains and fine-tunes a fresh model under `mask`, scoring the test
    /// set after each phase.
    pub fn run(&self, mask: AblationMask) -> Result<RunOutcome> {
        let init = Model::init(self.model.clone(), &self.corpus.store)?;
        let cfg = TrainConfig { mask, epochs: self.pretrain_epochs, ..self.train.clone() };
        let (pretrained, pretrain_log) = pretrain(init, &self.corpus, &self.d_full, &cfg)?;
        let pretrain_auc = self.test_auc(&pretrained, mask)?;
        let cfg = TrainConfig { epochs: self.finetune_epochs, ..cfg };
        let (finetuned, finetune_log) = finetune(pretrained.clone(), &self.model, &self.corpus, &self.d_cold, &cfg)?;
        let finetune_auc = self.test_auc(&finetuned, mask)?;
        log::info!("mask {mask}: pretrain AUC {pretrain_auc:.4}, fine-tuned AUC {finetune_auc:.4}");
        Ok(RunOutcome { mask, pretrain_auc, finetune_auc, pretrained, finetuned, pretrain_log, finetune_log })
    }
}
