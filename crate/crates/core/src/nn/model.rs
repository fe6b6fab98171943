use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::{Backbone, BackboneSpec, FeatureShape};
use super::layers::Dense;
use super::location::{ContextMode, LocationModule, LocationSpec};
use super::params::ParamStore;
use super::positional::{PositionalMode, PositionalModule, PositionalSpec};
use super::weighting::FeatureWeighting;
use crate::autodiff::Activation;
use crate::error::{config_err, Result};
use crate::geometry::ReceptiveField;

/// Static description of every module of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub location: LocationSpec,
    pub positional: PositionalSpec,
    /// Learned feature weighting instead of plain averaging.
    pub weighting: bool,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn paper_imagenet() -> Self {
        Self {
            backbone: BackboneSpec::paper_imagenet(),
            location: LocationSpec { context: ContextMode::Concat, hidden: 512 },
            positional: PositionalSpec { mode: PositionalMode::ConcatLinear, enc_dim: 512 },
            weighting: false,
            num_classes: 1000,
        }
    }

    pub fn paper_fmow_lite() -> Self {
        Self {
            backbone: BackboneSpec::paper_fmow_lite(),
            location: LocationSpec { context: ContextMode::SqueezeExcite { ratio: 0.5 }, hidden: 80 },
            positional: PositionalSpec { mode: PositionalMode::ProjectAdd, enc_dim: 320 },
            weighting: false,
            num_classes: 62,
        }
    }

    pub fn tiny(num_classes: usize) -> Self {
        Self {
            backbone: BackboneSpec::tiny(),
            location: LocationSpec { context: ContextMode::Concat, hidden: 32 },
            positional: PositionalSpec { mode: PositionalMode::ConcatLinear, enc_dim: 24 },
            weighting: false,
            num_classes,
        }
    }

    /// Model preset by backbone name, with the class count of its task.
    pub fn preset(name: &str, num_classes: Option<usize>) -> Option<Self> {
        let mut spec = match name {
            "paper-imagenet" => Self::paper_imagenet(),
            "paper-fmow-lite" => Self::paper_fmow_lite(),
            "tiny" => Self::tiny(4),
            _ => return None,
        };
        if let Some(k) = num_classes {
            spec.num_classes = k;
        }
        Some(spec)
    }

    /// Channel count of the tap map feeding the location module.
    pub fn tap_shape(&self) -> Result<(usize, usize, ReceptiveField)> {
        match self.backbone.validate()? {
            (FeatureShape::Map { h, c, .. }, rf) => Ok((h, c, rf)),
            (s, _) => Err(config_err!("tap output {s:?} is not a map")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tap_shape()?;
        self.positional.validate(self.backbone.feature_dim)?;
        if self.num_classes < 2 {
            return Err(config_err!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.location.hidden == 0 {
            return Err(config_err!("location module hidden width must be positive"));
        }
        Ok(())
    }

    pub fn classifier_params(&self) -> usize {
        (self.backbone.feature_dim + 1) * self.num_classes
    }

    /// Trainable scalars of the whole network, computed without building it.
    pub fn param_count(&self) -> Result<usize> {
        let (_, c, _) = self.tap_shape()?;
        let fd = self.backbone.feature_dim;
        let mut total = self.backbone.param_count()?
            + self.location.param_count(c, fd)
            + self.positional.param_count(fd)
            + self.classifier_params();
        if self.weighting {
            total += FeatureWeighting::param_count(fd);
        }
        Ok(total)
    }
}

/// An instantiated network: parameters plus the modules indexing into them.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub location: LocationModule,
    pub positional: PositionalModule,
    pub classifier: Dense,
    pub weighting: Option<FeatureWeighting>,
}

impl Model {
    /// Builds the network with weights drawn from a generator seeded by `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (_, tap_c, _) = spec.tap_shape()?;
        let fd = spec.backbone.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::new(spec.backbone.clone(), &mut store, &mut rng)?;
        let location = LocationModule::new(spec.location, tap_c, fd, &mut store, &mut rng);
        let positional = PositionalModule::new(spec.positional, fd, &mut store, &mut rng)?;
        let classifier = Dense::new(&mut store, "classifier", fd, spec.num_classes, Activation::Identity, &mut rng);
        let weighting = spec.weighting.then(|| FeatureWeighting::new(fd, &mut store, &mut rng));
        Ok(Self { spec, store, backbone, location, positional, classifier, weighting })
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.backbone.feature_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_param_count_is_consistent() {
        for weighting in [false, true] {
            let mut spec = ModelSpec::tiny(4);
            spec.weighting = weighting;
            let m = Model::new(spec.clone(), 0).unwrap();
            assert_eq!(m.store.scalar_count(), spec.param_count().unwrap());
        }
    }

    #[test]
    fn fmow_lite_counts_statically() {
        let spec = ModelSpec::paper_fmow_lite();
        assert!(spec.param_count().unwrap() > 3_000_000);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Model::new(ModelSpec::tiny(4), 5).unwrap();
        let b = Model::new(ModelSpec::tiny(4), 5).unwrap();
        for ((_, pa), (_, pb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }
}
