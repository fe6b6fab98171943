mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnet_core::checkpoint::Checkpoint;
use tnet_core::eval::fit;
use tnet_core::nn::{Gradients, Graph, Model};
use tnet_core::parallel::Execution;
use tnet_core::training::{
    surrogate_base, surrogate_per_feature, BaselineState, Baselines, LossWeights, TrainConfig, Trainer,
};
use tnet_core::traversal::{argmax, traverse, SelectionMode, TopK, TraversalConfig, TraverseOptions};
use tnet_core::{Real, Tensor, Var};

use common::{glyph_config, glyph_data, random, tiny_model};

fn grads_of(g: &mut Graph, v: Var) -> Gradients {
    g.zero_grad();
    g.backward(v).unwrap();
    g.gradients()
}

fn combine(parts: &[(Real, &Gradients)], store: &tnet_core::nn::ParamStore) -> Gradients {
    let mut out = Gradients::zeros_like(store);
    for (c, grad) in parts {
        let mut scaled = (*grad).clone();
        scaled.scale(*c);
        out.add_assign(&scaled);
    }
    out
}

fn setup(seed: u64, locations: usize) -> (Model, TraversalConfig, Tensor) {
    let model = tiny_model(seed, 3);
    let image = random(&[64, 64, 1], &mut ChaCha8Rng::seed_from_u64(seed));
    (model, TraversalConfig::synthetic(locations), image)
}

#[test]
fn base_surrogate_gradient_is_the_update_rule() {
    for (seed, b) in [(1, 0.5), (2, 0.0), (3, 0.9)] {
        let (model, cfg, image) = setup(seed, 2);
        let mut g = Graph::new(&model.store);
        let out = traverse(&model, &cfg, &mut g, &image, &mut TopK, TraverseOptions::default()).unwrap();
        let label = 1;
        let w = LossWeights { lambda_f: 0.4, ..LossWeights::default() };
        let (loss, rec) = surrogate_base(&mut g, &out, label, b, &w).unwrap();
        let reward = if argmax(g.value(out.logits).data()) == label { 1.0 } else { 0.0 };
        assert_eq!(rec.sequence, reward);

        let surrogate = grads_of(&mut g, loss);
        let ce = g.cross_entropy(out.logits, label).unwrap();
        let d_ce = grads_of(&mut g, ce);
        let d_seq = grads_of(&mut g, out.seq_log_prob);
        let manual = combine(&[(1.0, &d_ce), (-w.lambda_f * (reward - b), &d_seq)], &model.store);
        assert!(surrogate.max_abs_diff(&manual) < 1e-10);
    }
}

#[test]
fn per_feature_surrogate_gradient_is_the_update_rule() {
    let (model, cfg, image) = setup(4, 3);
    let mut g = Graph::new(&model.store);
    let out = traverse(&model, &cfg, &mut g, &image, &mut TopK, TraverseOptions { node_logits: true }).unwrap();
    let label = 2;
    let w = LossWeights { lambda_f: 0.6, lambda_c: 0.3, lambda_r: 0.7, ..LossWeights::default() };
    let baselines =
        Baselines { sequence: BaselineState { b: 0.4 }, location: BaselineState { b: 0.55 }, shared: false };
    let (loss, rec) = surrogate_per_feature(&mut g, &out, label, &baselines, &w).unwrap();
    let surrogate = grads_of(&mut g, loss);

    let correct = |g: &Graph, v: Var| if argmax(g.value(v).data()) == label { 1.0 } else { 0.0 };
    let r_s = correct(&g, out.logits);
    let ce = g.cross_entropy(out.logits, label).unwrap();
    let mut parts: Vec<(Real, Gradients)> = vec![
        (w.lambda_c, grads_of(&mut g, ce)),
        (-w.lambda_f * w.lambda_r * (r_s - 0.4), grads_of(&mut g, out.seq_log_prob)),
    ];
    let attended = out.tree.attended().to_vec();
    let inv = 1.0 / attended.len() as Real;
    let mut rewards = Vec::new();
    for node in &attended {
        let logits = node.logits.unwrap();
        let r_k = correct(&g, logits);
        rewards.push(r_k);
        let ce_k = g.cross_entropy(logits, label).unwrap();
        parts.push((inv * (1.0 - w.lambda_c), grads_of(&mut g, ce_k)));
        parts.push((-inv * w.lambda_f * (1.0 - w.lambda_r) * (r_k - 0.55), grads_of(&mut g, node.log_prob)));
    }
    let refs: Vec<(Real, &Gradients)> = parts.iter().map(|(c, gr)| (*c, gr)).collect();
    let manual = combine(&refs, &model.store);
    assert!(surrogate.max_abs_diff(&manual) < 1e-10);
    assert_eq!(rec.locations, rewards);
}

#[test]
fn baseline_only_scales_the_policy_term() {
    let (model, cfg, image) = setup(5, 1);
    let w = LossWeights { lambda_f: 0.5, ..LossWeights::default() };
    let grad_at = |b: Real| {
        let mut g = Graph::new(&model.store);
        let out = traverse(&model, &cfg, &mut g, &image, &mut TopK, TraverseOptions::default()).unwrap();
        let (loss, _) = surrogate_base(&mut g, &out, 0, b, &w).unwrap();
        let total = grads_of(&mut g, loss);
        (total, grads_of(&mut g, out.seq_log_prob))
    };
    let (g1, d_seq) = grad_at(0.2);
    let (g2, _) = grad_at(0.7);
    // Moving b by 0.5 shifts the gradient by exactly λ_f·0.5·∇log p(l), nothing else.
    let shifted = combine(&[(1.0, &g1), (w.lambda_f * 0.5, &d_seq)], &model.store);
    assert!(shifted.max_abs_diff(&g2) < 1e-12);
}

#[test]
fn sampled_training_is_seeded() {
    let (train, _) = glyph_data(64, 1);
    let run = |seed: u64| {
        let mut cfg = glyph_config(seed, 1.0);
        cfg.traversal.selection = SelectionMode::Sample;
        cfg.batch = 8;
        let model = Model::new(cfg.model_spec().unwrap(), 0).unwrap();
        let mut trainer = Trainer::new(model, cfg.traversal.clone(), cfg.train_config()).unwrap();
        let mut losses = Vec::new();
        fit(&mut trainer, &train, cfg.batch, 4, |_, m| {
            losses.push(m.loss);
            Ok(())
        })
        .unwrap();
        losses
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (train, _) = glyph_data(64, 1);
    let mut cfg = glyph_config(7, 0.3);
    cfg.batch = 8;
    cfg.optim.decay = Some(tnet_core::training::LrDecay { every: 2, factor: 0.5 });
    let fresh = || {
        let model = Model::new(cfg.model_spec().unwrap(), cfg.seed).unwrap();
        Trainer::new(model, cfg.traversal.clone(), cfg.train_config()).unwrap()
    };
    let mut whole = fresh();
    fit(&mut whole, &train, cfg.batch, 6, |_, _| Ok(())).unwrap();

    let mut first = fresh();
    fit(&mut first, &train, cfg.batch, 3, |_, _| Ok(())).unwrap();
    let bytes = Checkpoint::from_trainer(&first, "").encode();
    let mut resumed = fresh();
    Checkpoint::decode(&bytes, None).unwrap().restore_trainer(&mut resumed).unwrap();
    fit(&mut resumed, &train, cfg.batch, 6, |_, _| Ok(())).unwrap();

    assert_eq!(
        Checkpoint::from_trainer(&whole, "").encode(),
        Checkpoint::from_trainer(&resumed, "").encode()
    );
}

#[test]
fn reward_rises_early_in_training() {
    let (train, _) = glyph_data(2000, 1);
    let mut rising = 0;
    let mut summary = Vec::new();
    for seed in 0..5 {
        let mut cfg = glyph_config(seed, 0.3);
        cfg.batch = 16;
        let model = Model::new(cfg.model_spec().unwrap(), cfg.seed).unwrap();
        let mut tc: TrainConfig = cfg.train_config();
        tc.execution = Execution::Parallel;
        let mut trainer = Trainer::new(model, cfg.traversal.clone(), tc).unwrap();
        let mut rewards = Vec::new();
        fit(&mut trainer, &train, cfg.batch, 200, |_, m| {
            rewards.push(m.reward);
            Ok(())
        })
        .unwrap();
        let mean = |v: &[Real]| v.iter().sum::<Real>() / v.len() as Real;
        let (early, late) = (mean(&rewards[..40]), mean(&rewards[160..]));
        summary.push((early, late));
        rising += usize::from(late > early);
    }
    assert!(rising >= 4, "mean reward early/late per seed: {summary:?}");
}
