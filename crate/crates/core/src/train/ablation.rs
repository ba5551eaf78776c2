use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, train, EvalReport, TrainOptions};
use crate::data::Dataset;
use crate::error::Result;
use crate::io::fmt6;
use crate::model::{ModelConfig, SpecTnt, Variant};

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub steps_run: usize,
    pub best_step: usize,
    pub seconds: f64,
    pub diverged: Option<String>,
    /// Held-out metrics of the best-on-validation parameters.
    pub test: EvalReport,
}

/// Trains every variant of `base` from the same seed on the same split and
/// scores each on the test set. `opts` builds fresh options per variant.
pub fn run_ablation(
    base: &ModelConfig,
    variants: &[Variant],
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
    opts: impl Fn() -> TrainOptions,
    mut progress: impl FnMut(Variant, &super::HistoryRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let o = opts();
        let cfg = base.clone().with_variant(variant);
        let (model, mut store) = SpecTnt::init::<f32>(&cfg, o.seed)?;
        let params = store.param_count();
        let out = train(&model, &mut store, train_set, Some(val_set), &o, |r| progress(variant, r))?;
        let test = evaluate(&model, &out.best, test_set, o.batch_size)?;
        rows.push(AblationRow {
            variant,
            params,
            steps_run: out.steps_run,
            best_step: out.best_step,
            seconds: out.seconds,
            diverged: out.diverged,
            test,
        });
    }
    Ok(rows)
}

/// Plain-text table, one row per variant, metric columns in name order.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let metrics: Vec<&String> = rows.first().map(|r| r.test.metrics.keys().collect()).unwrap_or_default();
    let mut s = format!("{:<8}{:>10}{:>8}{:>10}", "variant", "params", "steps", "seconds");
    for m in &metrics {
        let _ = write!(s, "{m:>16}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<8}{:>10}{:>8}{:>10}", r.variant.name(), r.params, r.steps_run, fmt6(r.seconds));
        for m in &metrics {
            let _ = write!(s, "{:>16}", r.test.metrics.get(*m).map_or("-".to_string(), |v| fmt6(*v)));
        }
        s.push('\n');
    }
    s
}
