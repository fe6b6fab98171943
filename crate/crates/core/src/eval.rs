//! Batch evaluation against ground truth, and the minibatch training driver.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Sample};
use crate::error::{contract_err, Result};
use crate::nn::{Graph, Model};
use crate::parallel::{derive_seed, map_ordered, Execution};
use crate::profiler::{policy_metrics, PolicyMetrics};
use crate::tensor::{Real, Tensor};
use crate::training::{StepMetrics, Trainer};
use crate::traversal::{traverse, Prediction, TopK, TraversalConfig, TraverseOptions};

/// Deterministic top-k prediction of every sample.
pub fn predict_all(model: &Model, config: &TraversalConfig, images: &[Tensor], exec: Execution) -> Result<Vec<Prediction>> {
    map_ordered(exec, images, |_, img| {
        let mut g = Graph::new(&model.store);
        let out = traverse(model, config, &mut g, img, &mut TopK, TraverseOptions::default())?;
        Prediction::from_output(&g, &out)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Children per node at the last level.
    pub locations: usize,
    pub accuracy: Real,
    /// Mean policy metrics against the glyph bounding boxes; absent with no attended regions.
    pub policy: Option<PolicyMetrics>,
    /// Share of level-2 attended cells that hold the target glyph.
    pub cell_precision: Option<Real>,
    pub flops_per_image: u64,
}

impl EvalReport {
    pub fn to_record(&self) -> String {
        let opt = |v: Option<Real>| v.map_or("na".to_string(), |v| format!("{v:.6}"));
        format!(
            "locations={} accuracy={:.6} precision={} recall={} coverage={} cell_precision={} flops={}",
            self.locations,
            self.accuracy,
            opt(self.policy.map(|p| p.precision)),
            opt(self.policy.map(|p| p.recall)),
            opt(self.policy.map(|p| p.coverage)),
            opt(self.cell_precision),
            self.flops_per_image
        )
    }
}

/// Scores predictions against samples.
pub fn score(predictions: &[Prediction], samples: &[Sample], locations: usize, extent: usize) -> Result<EvalReport> {
    if predictions.len() != samples.len() || samples.is_empty() {
        return Err(contract_err!("{} predictions for {} samples", predictions.len(), samples.len()));
    }
    let n = samples.len() as Real;
    let accuracy = predictions.iter().zip(samples).filter(|(p, s)| p.class == s.label).count() as Real / n;
    let mut sum = PolicyMetrics { precision: 0.0, recall: 0.0, coverage: 0.0 };
    let mut with_regions = 0;
    let (mut hits, mut cells) = (0usize, 0usize);
    for (p, s) in predictions.iter().zip(samples) {
        if p.attended.is_empty() {
            continue;
        }
        let m = policy_metrics(&p.attended, s.bbox, extent)?;
        sum.precision += m.precision;
        sum.recall += m.recall;
        sum.coverage += m.coverage;
        with_regions += 1;
        let level2 = p.level2_cells();
        hits += level2.iter().filter(|&&c| c == s.cell).count();
        cells += level2.len();
    }
    let policy = (with_regions > 0).then(|| {
        let k = with_regions as Real;
        PolicyMetrics { precision: sum.precision / k, recall: sum.recall / k, coverage: sum.coverage / k }
    });
    let cell_precision = (cells > 0).then(|| hits as Real / cells as Real);
    let flops_per_image = predictions[0].flops;
    Ok(EvalReport { locations, accuracy, policy, cell_precision, flops_per_image })
}

/// Evaluates `model` on `data` with `locations` children per node at the last level.
pub fn evaluate(
    model: &Model,
    config: &TraversalConfig,
    data: &Dataset,
    locations: usize,
    exec: Execution,
) -> Result<EvalReport> {
    let config = config.with_final_locations(locations);
    let images = data.inputs();
    let preds = predict_all(model, &config, &images, exec)?;
    score(&preds, &data.samples, locations, config.image_extent()?)
}

/// Indices of the minibatch used at `step`; depends only on `(seed, step)`.
pub fn batch_indices(seed: u64, step: usize, batch: usize, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x6261_7463, step as u64]));
    if batch >= len {
        return (0..len).collect();
    }
    sample(&mut rng, len, batch).into_vec()
}

/// Runs optimizer steps until `trainer.step == until`, calling `on_step` after each.
pub fn fit(
    trainer: &mut Trainer,
    data: &Dataset,
    batch: usize,
    until: usize,
    mut on_step: impl FnMut(&Trainer, &StepMetrics) -> Result<()>,
) -> Result<()> {
    if data.is_empty() || batch == 0 {
        return Err(contract_err!("training needs samples and a positive batch size"));
    }
    let seed = trainer.config.seed;
    while trainer.step < until {
        let idx = batch_indices(seed, trainer.step, batch, data.len());
        let images: Vec<Tensor> = idx.iter().map(|&i| data.samples[i].input()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.samples[i].label).collect();
        let m = trainer.train_step(&images, &labels)?;
        on_step(trainer, &m)?;
    }
    Ok(())
}
