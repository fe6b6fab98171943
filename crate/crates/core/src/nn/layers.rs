//! Parameterized building blocks shared by the network modules.

use rand::Rng;

use super::params::{Graph, ParamId, ParamStore};
use crate::autodiff::{Activation, Padding, Var};
use crate::error::Result;
use crate::profiler::ConvCost;
use crate::tensor::Real;

/// Fully connected layer over the trailing axis (a 1×1 convolution when
/// applied to `[rows, C]`).
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.register_glorot(format!("{name}.weight"), &[cin, cout], cin, cout, rng);
        let bias = Some(store.register_zeros(format!("{name}.bias"), &[cout]));
        Self { weight, bias, cin, cout, activation }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        let y = g.linear(x, w, b)?;
        Ok(g.activation(y, self.activation))
    }

    pub fn param_count(&self) -> usize {
        self.cin * self.cout + if self.bias.is_some() { self.cout } else { 0 }
    }

    /// Cost when applied at `positions` spatial positions.
    pub fn cost(&self, name: &str, positions: usize) -> ConvCost {
        ConvCost::new(name, self.cin, 1, positions, 1, self.cout)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: Padding,
    pub activation: Activation,
    pub depthwise: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let kernel = store.register_glorot(
            format!("{name}.kernel"),
            &[k, k, cin, cout],
            k * k * cin,
            k * k * cout,
            rng,
        );
        let bias = store.register_zeros(format!("{name}.bias"), &[cout]);
        Self { kernel, bias, k, cin, cout, stride, padding, activation, depthwise: false }
    }

    pub fn depthwise(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        channels: usize,
        stride: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let kernel =
            store.register_glorot(format!("{name}.kernel"), &[k, k, channels], k * k, k * k, rng);
        let bias = store.register_zeros(format!("{name}.bias"), &[channels]);
        Self {
            kernel,
            bias,
            k,
            cin: channels,
            cout: channels,
            stride,
            padding: Padding::Same,
            activation,
            depthwise: true,
        }
    }

    /// Convolution plus bias, before the activation.
    pub fn pre_activation(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let k = g.param(self.kernel);
        let b = g.param(self.bias);
        let y = if self.depthwise {
            g.depthwise_conv2d(x, k, self.stride, self.padding)?
        } else {
            g.conv2d(x, k, self.stride, self.padding)?
        };
        g.bias_add(y, b)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = self.pre_activation(g, x)?;
        Ok(g.activation(y, self.activation))
    }
}

/// Squeeze-and-excitation over the rows of `[.., C]`: mean over rows, a
/// bottleneck of `C·ratio` units with SiLU, sigmoid gates per channel.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub squeeze: Dense,
    pub excite: Dense,
}

impl SqueezeExcite {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduced: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let reduced = reduced.max(1);
        Self {
            squeeze: Dense::new(store, &format!("{name}.squeeze"), channels, reduced, Activation::Silu, rng),
            excite: Dense::new(store, &format!("{name}.excite"), reduced, channels, Activation::Sigmoid, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let pooled = g.mean_rows(x)?;
        let s = self.squeeze.forward(g, pooled)?;
        let gate = self.excite.forward(g, s)?;
        g.mul_channel(x, gate)
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.excite.param_count()
    }

    pub fn costs(&self, name: &str) -> Vec<ConvCost> {
        vec![
            self.squeeze.cost(&format!("{name}.squeeze"), 1),
            self.excite.cost(&format!("{name}.excite"), 1),
        ]
    }
}

/// Bottleneck width of an SE block whose first layer has `channels·ratio` units.
pub fn se_width(channels: usize, ratio: Real) -> usize {
    ((channels as f64 * ratio as f64).round() as usize).max(1)
}
