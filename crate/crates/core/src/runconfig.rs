//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! `#` starts a comment. A `preset` key, wherever it appears, selects the
//! defaults every other key overrides.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::SynthSpec;
use crate::error::{config_err, Error, Result};
use crate::geometry::CellMode;
use crate::nn::ModelSpec;
use crate::parallel::Execution;
use crate::tensor::Real;
use crate::training::{AdamConfig, LossWeights, LrDecay, TrainConfig};
use crate::traversal::{SelectionMode, SeqProbMode, TraversalConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub workers: usize,
    pub backbone: String,
    pub classes: usize,
    pub weighting: bool,
    pub traversal: TraversalConfig,
    pub data: SynthSpec,
    pub data_count: usize,
    pub loss: LossWeights,
    pub separate_baselines: bool,
    pub optim: AdamConfig,
    pub steps: usize,
    pub batch: usize,
    pub checkpoint_every: usize,
}

pub const PRESETS: [&str; 3] = ["synthetic", "paper-imagenet", "paper-fmow"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            preset: name.to_string(),
            seed: 0,
            workers: 0,
            backbone: "tiny".into(),
            classes: 4,
            weighting: false,
            traversal: TraversalConfig::synthetic(1),
            data: SynthSpec::default(),
            data_count: 4000,
            loss: LossWeights::per_feature(0.3),
            separate_baselines: false,
            optim: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            steps: 1000,
            batch: 32,
            checkpoint_every: 0,
        };
        match name {
            "synthetic" => Ok(base),
            "paper-imagenet" => Ok(Self {
                backbone: "paper-imagenet".into(),
                classes: 1000,
                traversal: TraversalConfig::imagenet(1),
                optim: AdamConfig::default(),
                batch: 64,
                ..base
            }),
            "paper-fmow" => Ok(Self {
                backbone: "paper-fmow-lite".into(),
                classes: 62,
                traversal: TraversalConfig::fmow(),
                loss: LossWeights { level_mask: Some(vec![true, true, false]), ..LossWeights::per_feature(0.05) },
                optim: AdamConfig::default(),
                batch: 32,
                ..base
            }),
            other => Err(config_err!("unknown preset `{other}` (expected one of {})", PRESETS.join(", "))),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::preset(&self.backbone, Some(self.classes))
            .ok_or_else(|| config_err!("unknown backbone `{}`", self.backbone))?;
        spec.weighting = self.weighting;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            weights: self.loss.clone(),
            adam: self.optim.clone(),
            separate_baselines: self.separate_baselines,
            seed: self.seed,
            execution: if self.workers == 1 { Execution::Sequential } else { Execution::Parallel },
        }
    }

    /// Cross-module consistency of model, traversal, data and training settings.
    pub fn validate(&self) -> Result<()> {
        let model = self.model_spec()?;
        model.validate()?;
        self.traversal.validate(&model)?;
        self.loss.validate()?;
        self.optim.validate()?;
        if let Some(mask) = &self.loss.level_mask {
            if mask.len() != self.traversal.levels {
                return Err(config_err!(
                    "loss.level_mask has {} entries for {} levels",
                    mask.len(),
                    self.traversal.levels
                ));
            }
        }
        if self.backbone == "tiny" || self.preset == "synthetic" {
            self.data.validate()?;
            let extent = self.traversal.image_extent()?;
            if self.data.image_extent != extent {
                return Err(config_err!(
                    "data.image_extent {} differs from the traversal's image extent {extent}",
                    self.data.image_extent
                ));
            }
            if self.data.num_classes != self.classes {
                return Err(config_err!("data.classes {} differs from model.classes {}", self.data.num_classes, self.classes));
            }
            if self.data.base_resolution != self.traversal.base_resolution {
                return Err(config_err!("data.base {} differs from traversal.base", self.data.base_resolution));
            }
        }
        if self.batch == 0 {
            return Err(config_err!("train.batch must be positive"));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut preset = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected `key = value`, got `{line}`", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if entries.iter().any(|(_, k, _): &(usize, String, String)| k == key) {
                return Err(config_err!("line {}: duplicate key `{key}`", i + 1));
            }
            if key == "preset" {
                preset = Some((i + 1, value.to_string()));
            }
            entries.push((i + 1, key.to_string(), value.to_string()));
        }
        let mut cfg = match preset {
            Some((line, name)) => Self::preset(&name).map_err(|e| at_line(line, "preset", e))?,
            None => Self::preset("synthetic")?,
        };
        for (line, key, value) in entries {
            if key != "preset" {
                cfg.set(&key, &value).map_err(|e| at_line(line, &key, e))?;
            }
        }
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.traversal;
        let d = &self.data;
        let l = &self.loss;
        let o = &self.optim;
        vec![
            ("preset", self.preset.clone()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("model.backbone", self.backbone.clone()),
            ("model.classes", self.classes.to_string()),
            ("model.weighting", self.weighting.to_string()),
            ("traversal.levels", t.levels.to_string()),
            ("traversal.base", t.base_resolution.to_string()),
            ("traversal.grid", t.grid_n.to_string()),
            ("traversal.cells", cell_mode_str(t.cell_mode)),
            ("traversal.locations", join(&t.locations)),
            ("traversal.selection", if t.selection == SelectionMode::TopK { "topk" } else { "sample" }.into()),
            ("traversal.seq_prob", if t.seq_prob == SeqProbMode::Exact { "exact" } else { "simplified" }.into()),
            ("data.image_extent", d.image_extent.to_string()),
            ("data.glyph_extent", d.glyph_extent.to_string()),
            ("data.classes", d.num_classes.to_string()),
            ("data.clutter_density", d.clutter_density.to_string()),
            ("data.clutter_contrast", d.clutter_contrast.to_string()),
            ("data.grid", d.grid_n.to_string()),
            ("data.base", d.base_resolution.to_string()),
            ("data.seed", d.seed.to_string()),
            ("data.count", self.data_count.to_string()),
            ("loss.lambda_f", l.lambda_f.to_string()),
            ("loss.lambda_c", l.lambda_c.to_string()),
            ("loss.lambda_r", l.lambda_r.to_string()),
            ("loss.lambda_con", l.lambda_con.to_string()),
            ("loss.alpha", l.alpha.to_string()),
            ("loss.samples", l.samples.to_string()),
            ("loss.include_root", l.include_root.to_string()),
            ("loss.level_mask", l.level_mask.as_ref().map_or("all".into(), |m| join(m))),
            ("loss.separate_baselines", self.separate_baselines.to_string()),
            ("optim.lr", o.lr.to_string()),
            ("optim.beta1", o.beta1.to_string()),
            ("optim.beta2", o.beta2.to_string()),
            ("optim.eps", o.eps.to_string()),
            ("optim.decay_every", o.decay.map_or(0, |d| d.every).to_string()),
            ("optim.decay_factor", o.decay.map_or(1.0, |d| d.factor).to_string()),
            ("optim.clip", o.clip_norm.map_or("none".into(), |c| c.to_string())),
            ("train.steps", self.steps.to_string()),
            ("train.batch", self.batch.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.traversal;
        let d = &mut self.data;
        let l = &mut self.loss;
        let o = &mut self.optim;
        match key {
            "seed" => self.seed = num(v)?,
            "workers" => self.workers = num(v)?,
            "model.backbone" => self.backbone = v.to_string(),
            "model.classes" => self.classes = num(v)?,
            "model.weighting" => self.weighting = num(v)?,
            "traversal.levels" => t.levels = num(v)?,
            "traversal.base" => t.base_resolution = num(v)?,
            "traversal.grid" => t.grid_n = num(v)?,
            "traversal.cells" => t.cell_mode = parse_cell_mode(v)?,
            "traversal.locations" => t.locations = list(v)?,
            "traversal.selection" => {
                t.selection = match v {
                    "topk" => SelectionMode::TopK,
                    "sample" => SelectionMode::Sample,
                    _ => return Err(format!("expected `topk` or `sample`, got `{v}`")),
                }
            }
            "traversal.seq_prob" => {
                t.seq_prob = match v {
                    "exact" => SeqProbMode::Exact,
                    "simplified" => SeqProbMode::Simplified,
                    _ => return Err(format!("expected `exact` or `simplified`, got `{v}`")),
                }
            }
            "data.image_extent" => d.image_extent = num(v)?,
            "data.glyph_extent" => d.glyph_extent = num(v)?,
            "data.classes" => d.num_classes = num(v)?,
            "data.clutter_density" => d.clutter_density = num(v)?,
            "data.clutter_contrast" => d.clutter_contrast = num(v)?,
            "data.grid" => d.grid_n = num(v)?,
            "data.base" => d.base_resolution = num(v)?,
            "data.seed" => d.seed = num(v)?,
            "data.count" => self.data_count = num(v)?,
            "loss.lambda_f" => l.lambda_f = num(v)?,
            "loss.lambda_c" => l.lambda_c = num(v)?,
            "loss.lambda_r" => l.lambda_r = num(v)?,
            "loss.lambda_con" => l.lambda_con = num(v)?,
            "loss.alpha" => l.alpha = num(v)?,
            "loss.samples" => l.samples = num(v)?,
            "loss.include_root" => l.include_root = num(v)?,
            "loss.level_mask" => l.level_mask = if v == "all" { None } else { Some(list(v)?) },
            "loss.separate_baselines" => self.separate_baselines = num(v)?,
            "optim.lr" => o.lr = num(v)?,
            "optim.beta1" => o.beta1 = num(v)?,
            "optim.beta2" => o.beta2 = num(v)?,
            "optim.eps" => o.eps = num(v)?,
            "optim.decay_every" => {
                let every: usize = num(v)?;
                let factor = o.decay.map_or(1.0, |d| d.factor);
                o.decay = (every > 0).then_some(LrDecay { every, factor });
            }
            "optim.decay_factor" => {
                let factor: Real = num(v)?;
                if let Some(d) = &mut o.decay {
                    d.factor = factor;
                } else if factor != 1.0 {
                    return Err("set optim.decay_every before optim.decay_factor".into());
                }
            }
            "optim.clip" => o.clip_norm = if v == "none" { None } else { Some(num(v)?) },
            "train.steps" => self.steps = num(v)?,
            "train.batch" => self.batch = num(v)?,
            "train.checkpoint_every" => self.checkpoint_every = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}

fn at_line(line: usize, key: &str, e: impl std::fmt::Display) -> Error {
    config_err!("line {line}: field `{key}`: {e}")
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn cell_mode_str(m: CellMode) -> String {
    match m {
        CellMode::Fraction(f) => format!("fraction:{f}"),
        CellMode::Overlap(o) => format!("overlap:{o}"),
    }
}

fn parse_cell_mode(v: &str) -> std::result::Result<CellMode, String> {
    match v.split_once(':') {
        Some(("fraction", f)) => Ok(CellMode::Fraction(num(f)?)),
        Some(("overlap", o)) => Ok(CellMode::Overlap(num(o)?)),
        _ => Err(format!("expected `fraction:<f>` or `overlap:<o>`, got `{v}`")),
    }
}
