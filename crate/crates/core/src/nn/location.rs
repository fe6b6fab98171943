//! Location module: scores the `n × n` candidate cells of one grid with a
//! head shared across cells.

use rand::Rng;

use super::layers::{se_width, Dense, SqueezeExcite};
use super::params::{Graph, ParamId, ParamStore};
use crate::autodiff::{Activation, Var};
use crate::error::{config_err, shape_err, Result};
use crate::profiler::ConvCost;
use crate::tensor::{Real, Tensor};

/// How image-level context reaches the per-cell features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContextMode {
    /// The backbone's feature vector is concatenated to every cell.
    Concat,
    /// A 1×1 conv plus squeeze-and-excitation over the cells; the bottleneck
    /// has `channels · ratio` units.
    SqueezeExcite { ratio: Real },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocationSpec {
    pub context: ContextMode,
    /// Width of the 1×1 fusion layer before the logit projection.
    pub hidden: usize,
}

impl LocationSpec {
    fn hidden_activation(&self) -> Activation {
        match self.context {
            ContextMode::Concat => Activation::LEAKY,
            ContextMode::SqueezeExcite { .. } => Activation::Silu,
        }
    }

    /// Channels entering the fusion layer, coordinates included.
    fn fused_width(&self, tap_channels: usize, feature_dim: usize) -> usize {
        match self.context {
            ContextMode::Concat => tap_channels + feature_dim + 2,
            ContextMode::SqueezeExcite { .. } => tap_channels + 2,
        }
    }

    pub fn param_count(&self, tap_channels: usize, feature_dim: usize) -> usize {
        let fused = self.fused_width(tap_channels, feature_dim);
        let mut total = 4 + fused * self.hidden + self.hidden + self.hidden + 1;
        if let ContextMode::SqueezeExcite { ratio } = self.context {
            let c = tap_channels;
            let r = se_width(c, ratio);
            total += c * c + c + c * r + r + r * c + c;
        }
        total
    }

    /// Multiplications for one application on an `n × n` grid.
    pub fn costs(&self, n: usize, tap_channels: usize, feature_dim: usize) -> Vec<ConvCost> {
        let c = tap_channels;
        let mut out = Vec::new();
        if let ContextMode::SqueezeExcite { ratio } = self.context {
            let r = se_width(c, ratio);
            out.push(ConvCost::new("location.context", c, 1, n, n, c));
            out.push(ConvCost::new("location.se.squeeze", c, 1, 1, 1, r));
            out.push(ConvCost::new("location.se.excite", r, 1, 1, 1, c));
        }
        out.push(ConvCost::new("location.coords", 1, 1, n, n, 2));
        let fused = self.fused_width(c, feature_dim);
        out.push(ConvCost::new("location.fuse", fused, 1, n, n, self.hidden));
        out.push(ConvCost::new("location.logit", self.hidden, 1, n, n, 1));
        out
    }
}

/// Normalized `(vertical, horizontal)` coordinates in `[-1, 1]` of every cell of
/// an `n × n` grid, row-major.
pub fn cell_coordinates(n: usize) -> Vec<(Real, Real)> {
    let axis = |i: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as Real / (n - 1) as Real };
    (0..n * n).map(|i| (axis(i / n), axis(i % n))).collect()
}

#[derive(Clone, Debug)]
pub struct LocationModule {
    pub spec: LocationSpec,
    tap_channels: usize,
    feature_dim: usize,
    pre: Option<(Dense, SqueezeExcite)>,
    /// Scale and shift of the vertical then horizontal coordinate channel.
    coord_scale: [ParamId; 2],
    coord_shift: [ParamId; 2],
    fuse: Dense,
    logit: Dense,
}

impl LocationModule {
    pub fn new(
        spec: LocationSpec,
        tap_channels: usize,
        feature_dim: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let pre = match spec.context {
            ContextMode::Concat => None,
            ContextMode::SqueezeExcite { ratio } => {
                let c = tap_channels;
                Some((
                    Dense::new(store, "location.context", c, c, Activation::Silu, rng),
                    SqueezeExcite::new(store, "location.se", c, se_width(c, ratio), rng),
                ))
            }
        };
        let coord_scale = ["y", "x"].map(|a| store.register(format!("location.coord_{a}.scale"), Tensor::vector(vec![1.0])));
        let coord_shift = ["y", "x"].map(|a| store.register_zeros(format!("location.coord_{a}.shift"), &[1]));
        let fused = spec.fused_width(tap_channels, feature_dim);
        let fuse = Dense::new(store, "location.fuse", fused, spec.hidden, spec.hidden_activation(), rng);
        let logit = Dense::new(store, "location.logit", spec.hidden, 1, Activation::Identity, rng);
        Self { spec, tap_channels, feature_dim, pre, coord_scale, coord_shift, fuse, logit }
    }

    pub fn logit_layer(&self) -> &Dense {
        &self.logit
    }

    /// Unit-norm logits `[n²]` for a tap map `[n, n, C]`; `context` is the
    /// backbone's feature vector and is required by [`ContextMode::Concat`].
    pub fn logits(&self, g: &mut Graph, tap: Var, context: Option<Var>) -> Result<Var> {
        let s = g.shape(tap).to_vec();
        if s.len() != 3 || s[0] != s[1] || s[2] != self.tap_channels {
            return Err(shape_err!(
                "location module expects [n, n, {}], got {:?}",
                self.tap_channels,
                s
            ));
        }
        let n = s[0];
        let cells = n * n;
        let mut x = g.reshape(tap, [cells, self.tap_channels])?;
        let mut parts = Vec::with_capacity(4);
        match &self.pre {
            None => {
                let ctx = context.ok_or_else(|| config_err!("concat context mode needs the feature vector"))?;
                if g.shape(ctx) != [self.feature_dim] {
                    return Err(shape_err!("context {:?} is not [{}]", g.shape(ctx), self.feature_dim));
                }
                let tiled = g.tile(ctx, cells)?;
                parts.push(x);
                parts.push(tiled);
            }
            Some((conv, se)) => {
                x = conv.forward(g, x)?;
                x = se.forward(g, x)?;
                parts.push(x);
            }
        }
        let coords = cell_coordinates(n);
        for axis in 0..2 {
            let raw: Vec<Real> = coords.iter().map(|&(y, x)| if axis == 0 { y } else { x }).collect();
            let c = g.constant(Tensor::new([cells, 1], raw)?);
            let a = g.param(self.coord_scale[axis]);
            let b = g.param(self.coord_shift[axis]);
            let scaled = g.mul_channel(c, a)?;
            parts.push(g.bias_add(scaled, b)?);
        }
        let fused = g.concat(&parts)?;
        let h = self.fuse.forward(g, fused)?;
        let logits = self.logit.forward(g, h)?;
        let flat = g.reshape(logits, [cells])?;
        g.l2_normalize(flat)
    }
}
