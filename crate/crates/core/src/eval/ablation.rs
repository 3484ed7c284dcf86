use std::fmt::Write as _;

use super::{rela_impr, Experiment};
use crate::model::AblationMask;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub mask: AblationMask,
    pub auc: f64,
}

/// One row per operator plus the full model and the base model.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    fn find(&self, mask: AblationMask) -> Option<f64> {
        self.rows.iter().find(|r| r.mask == mask).map(|r| r.auc)
    }

    pub fn full_auc(&self) -> f64 {
        self.find(AblationMask::NONE).expect("report always has a full row")
    }

    pub fn base_auc(&self) -> f64 {
        self.find(AblationMask::base()).expect("report always has a base row")
    }

    /// Tab-separated: operator, AUC, RelaImpr against the full model, and
    /// RelaImpr against the base model (in percent).
    pub fn to_tsv(&self) -> String {
        let (full, base) = (self.full_auc(), self.base_auc());
        let pct = |m: f64, r: f64| rela_impr(m, r).map_or_else(|_| "nan".to_string(), |v| format!("{v:.2}"));
        let mut out = String::from("operator\tauc\trela_impr_vs_full\trela_impr_vs_base\n");
        for r in &self.rows {
            writeln!(out, "{}\t{:.4}\t{}\t{}", r.name, r.auc, pct(r.auc, full), pct(r.auc, base))
                .expect("string write");
        }
        out
    }
}

/// Trains one model per mask with shared seed and config. The full model
/// and the base model are always included, first and second.
pub fn run_ablation(ex: &Experiment, masks: &[AblationMask]) -> Result<AblationReport> {
    let mut all = vec![AblationMask::NONE, AblationMask::base()];
    for m in masks {
        if !all.contains(m) {
            all.push(*m);
        }
    }
    let mut rows = Vec::with_capacity(all.len());
    for mask in all {
        let out = ex.run(mask)?;
        let name = match mask {
            m if m == AblationMask::NONE => "full".to_string(),
            m if m == AblationMask::base() => "base".to_string(),
            m => m.to_string(),
        };
        rows.push(AblationRow { name, mask, auc: out.finetune_auc });
    }
    Ok(AblationReport { rows })
}
