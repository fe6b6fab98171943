use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::baseline::Baselines;
use super::losses::{loss_contrastive, surrogate_base, surrogate_per_feature, LossWeights, RewardRecord};
use super::optim::{Adam, AdamConfig};
use crate::autodiff::Var;
use crate::error::{contract_err, Error, Result};
use crate::nn::{Gradients, Graph, Model};
use crate::parallel::{derive_seed, map_ordered, Execution};
use crate::tensor::{Real, Tensor};
use crate::traversal::{traverse, Sampler, SelectionMode, Selector, TopK, TraversalConfig, TraversalOutput, TraverseOptions};

#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Separate baselines for sequence and per-location rewards.
    pub separate_baselines: bool,
    pub seed: u64,
    pub execution: Execution,
}


impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.adam.validate()
    }

    fn per_location(&self) -> bool {
        self.weights.lambda_c < 1.0 || self.weights.lambda_r < 1.0
    }
}

/// Summary of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: Real,
    /// Fraction of traversals whose prediction was correct.
    pub accuracy: Real,
    /// Mean per-location reward (sequence reward when no per-location terms run).
    pub reward: Real,
    /// Sequence baseline used by this step, before its update.
    pub baseline: Real,
    pub grad_norm: Real,
}

impl StepMetrics {
    /// One `key=value` line; floats in shortest round-trip form.
    pub fn to_record(&self) -> String {
        format!(
            "step={} loss={:?} accuracy={:?} reward={:?} b={:?} grad_norm={:?}",
            self.step, self.loss, self.accuracy, self.reward, self.baseline, self.grad_norm
        )
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub traversal: TraversalConfig,
    pub config: TrainConfig,
    pub optimizer: Adam,
    pub baselines: Baselines,
    /// Completed optimizer steps.
    pub step: usize,
}

struct ImagePass {
    grads: Gradients,
    loss: Real,
    rewards: Vec<RewardRecord>,
}

impl Trainer {
    pub fn new(model: Model, traversal: TraversalConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        traversal.validate(&model.spec)?;
        let optimizer = Adam::new(config.adam.clone(), &model.store);
        let baselines = if config.separate_baselines { Baselines::separate() } else { Baselines::default() };
        Ok(Self { model, traversal, config, optimizer, baselines, step: 0 })
    }

    fn selector(&self, index: usize, sample: usize) -> Box<dyn Selector> {
        match self.traversal.selection {
            SelectionMode::TopK => Box::new(TopK),
            SelectionMode::Sample => {
                let seed = derive_seed(&[self.config.seed, self.step as u64, index as u64, sample as u64]);
                Box::new(Sampler(ChaCha8Rng::seed_from_u64(seed)))
            }
        }
    }

    fn options(&self) -> TraverseOptions {
        TraverseOptions { node_logits: self.config.per_location() }
    }

    fn surrogate(&self, g: &mut Graph, out: &TraversalOutput, label: usize) -> Result<(Var, RewardRecord)> {
        if self.config.per_location() {
            surrogate_per_feature(g, out, label, &self.baselines, &self.config.weights)
        } else {
            surrogate_base(g, out, label, self.baselines.sequence.b, &self.config.weights)
        }
    }

    /// Forward and backward of all samples of one image on its own graph.
    fn image_pass(&self, index: usize, image: &Tensor, label: usize, scale: Real) -> Result<ImagePass> {
        let mut g = Graph::new(&self.model.store);
        let mut losses = Vec::new();
        let mut rewards = Vec::new();
        for m in 0..self.config.weights.samples {
            let mut sel = self.selector(index, m);
            let out = traverse(&self.model, &self.traversal, &mut g, image, sel.as_mut(), self.options())?;
            let (l, r) = self.surrogate(&mut g, &out, label)?;
            losses.push(l);
            rewards.push(r);
        }
        let total = g.add_all(&losses)?;
        let loss = g.scale(total, scale);
        g.backward(loss)?;
        Ok(ImagePass { grads: g.gradients(), loss: g.value(loss).item(), rewards })
    }

    /// All samples on one joint graph, needed when the contrastive term couples images.
    fn joint_pass(&self, images: &[Tensor], labels: &[usize], scale: Real) -> Result<ImagePass> {
        let mut g = Graph::new(&self.model.store);
        let mut losses = Vec::new();
        let mut rewards = Vec::new();
        let mut aggregates = Vec::new();
        let mut agg_labels = Vec::new();
        for (i, (image, &label)) in images.iter().zip(labels).enumerate() {
            for m in 0..self.config.weights.samples {
                let mut sel = self.selector(i, m);
                let out = traverse(&self.model, &self.traversal, &mut g, image, sel.as_mut(), self.options())?;
                let (l, r) = self.surrogate(&mut g, &out, label)?;
                losses.push(l);
                rewards.push(r);
                aggregates.push(out.aggregate);
                agg_labels.push(label);
            }
        }
        let total = g.add_all(&losses)?;
        let mean = g.scale(total, scale);
        let w = &self.config.weights;
        let con = loss_contrastive(&mut g, &aggregates, &agg_labels, w.alpha, w.lambda_con)?;
        let loss = g.add(mean, con)?;
        g.backward(loss)?;
        Ok(ImagePass { grads: g.gradients(), loss: g.value(loss).item(), rewards })
    }

    /// One optimizer step on a batch of full-resolution images.
    pub fn train_step(&mut self, images: &[Tensor], labels: &[usize]) -> Result<StepMetrics> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(contract_err!("batch of {} images with {} labels", images.len(), labels.len()));
        }
        let scale = 1.0 / (images.len() * self.config.weights.samples) as Real;
        let passes = if self.config.weights.lambda_con > 0.0 {
            vec![self.joint_pass(images, labels, scale)?]
        } else {
            map_ordered(self.config.execution, images, |i, img| self.image_pass(i, img, labels[i], scale))
                .into_iter()
                .collect::<Result<Vec<_>>>()?
        };

        let mut grads = Gradients::zeros_like(&self.model.store);
        let mut loss = 0.0;
        let mut seq_rewards = Vec::new();
        let mut loc_rewards = Vec::new();
        for p in &passes {
            grads.add_assign(&p.grads);
            loss += p.loss;
            for r in &p.rewards {
                seq_rewards.push(r.sequence);
                loc_rewards.extend_from_slice(&r.locations);
            }
        }
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "step {}: loss {loss}, gradients finite: {}",
                self.step,
                grads.all_finite()
            )));
        }

        let grad_norm = self.optimizer.apply(&mut self.model.store, &grads);
        let baseline = self.baselines.sequence.b;
        self.baselines = self.baselines.update(&seq_rewards, &loc_rewards)?;
        self.step += 1;
        let mean = |v: &[Real]| v.iter().sum::<Real>() / v.len() as Real;
        let accuracy = mean(&seq_rewards);
        let reward = if loc_rewards.is_empty() { accuracy } else { mean(&loc_rewards) };
        Ok(StepMetrics { step: self.step, loss, accuracy, reward, baseline, grad_norm })
    }
}
