//! Positional encoding module: mixes a region's grid position and scale into
//! its feature vector.

use rand::Rng;

use super::layers::Dense;
use super::params::{Graph, ParamStore};
use crate::autodiff::{Activation, Var};
use crate::error::{config_err, shape_err, Result};
use crate::geometry::{encodes_scale, positional_encoding, PositionalTriplet};
use crate::profiler::ConvCost;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionalMode {
    /// `[V, enc]` through one linear layer back to the feature width.
    ConcatLinear,
    /// `act(V + W·enc)` with `enc` a quarter of the feature width.
    ProjectAdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionalSpec {
    pub mode: PositionalMode,
    pub enc_dim: usize,
}

impl PositionalSpec {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if !encodes_scale(self.enc_dim) {
            return Err(config_err!(
                "positional encoding length {} leaves no room for the scale entries (need at least 18)",
                self.enc_dim
            ));
        }
        if self.mode == PositionalMode::ProjectAdd && self.enc_dim * 4 != feature_dim {
            return Err(config_err!(
                "project_add needs encoding length {} (a quarter of feature width {}), got {}",
                feature_dim / 4,
                feature_dim,
                self.enc_dim
            ));
        }
        Ok(())
    }

    fn input_width(&self, feature_dim: usize) -> usize {
        match self.mode {
            PositionalMode::ConcatLinear => feature_dim + self.enc_dim,
            PositionalMode::ProjectAdd => self.enc_dim,
        }
    }

    pub fn param_count(&self, feature_dim: usize) -> usize {
        (self.input_width(feature_dim) + 1) * feature_dim
    }

    pub fn cost(&self, feature_dim: usize) -> ConvCost {
        ConvCost::new("positional", self.input_width(feature_dim), 1, 1, 1, feature_dim)
    }
}

#[derive(Clone, Debug)]
pub struct PositionalModule {
    pub spec: PositionalSpec,
    feature_dim: usize,
    pub proj: Dense,
}

impl PositionalModule {
    pub fn new(spec: PositionalSpec, feature_dim: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        spec.validate(feature_dim)?;
        let proj = Dense::new(
            store,
            "positional",
            spec.input_width(feature_dim),
            feature_dim,
            Activation::Identity,
            rng,
        );
        Ok(Self { spec, feature_dim, proj })
    }

    /// Encodes `triplet` and applies it to the feature vector `v`.
    pub fn apply(&self, g: &mut Graph, v: Var, triplet: PositionalTriplet) -> Result<Var> {
        if g.shape(v) != [self.feature_dim] {
            return Err(shape_err!("positional input {:?} is not [{}]", g.shape(v), self.feature_dim));
        }
        let enc = g.constant(positional_encoding(triplet, self.spec.enc_dim));
        match self.spec.mode {
            PositionalMode::ConcatLinear => {
                let joint = g.concat(&[v, enc])?;
                self.proj.forward(g, joint)
            }
            PositionalMode::ProjectAdd => {
                let p = self.proj.forward(g, enc)?;
                let sum = g.add(v, p)?;
                Ok(g.silu(sum))
            }
        }
    }
}
