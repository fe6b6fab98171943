//! Feature extraction module: a configurable CNN producing a feature vector
//! and an intermediate spatial map for the location module.

use rand::Rng;

use super::layers::{se_width, Conv, Dense, SqueezeExcite};
use super::params::{Graph, ParamStore};
use crate::autodiff::{conv_output_extent, Activation, Padding, Var};
use crate::error::{config_err, Result};
use crate::geometry::{rf_chain, LayerGeom, ReceptiveField};
use crate::profiler::ConvCost;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv { kernel: usize, channels: usize, stride: usize, padding: Padding, activation: Activation },
    /// Residual bottleneck: 1×1 (C/4) → k×k (C/4, stride, padding) → 1×1 (C).
    ConvBlock { kernel: usize, channels: usize, stride: usize, padding: Padding },
    /// Inverted residual: expand 1×1 → depthwise k×k → SE → project 1×1.
    MbConv { expand: usize, kernel: usize, channels: usize, stride: usize },
    Gap,
    Linear { units: usize, activation: Activation },
    Activation(Activation),
}

impl LayerSpec {
    pub fn conv(kernel: usize, channels: usize, stride: usize, padding: Padding, activation: Activation) -> Self {
        LayerSpec::Conv { kernel, channels, stride, padding, activation }
    }

    pub fn block(kernel: usize, channels: usize, stride: usize, padding: Padding) -> Self {
        LayerSpec::ConvBlock { kernel, channels, stride, padding }
    }

    pub fn mb(expand: usize, kernel: usize, channels: usize, stride: usize) -> Self {
        LayerSpec::MbConv { expand, kernel, channels, stride }
    }

    /// Spatial footprint for receptive-field tracking, if the layer has one.
    pub fn geom(&self) -> Option<LayerGeom> {
        match *self {
            LayerSpec::Conv { kernel, stride, padding, .. }
            | LayerSpec::ConvBlock { kernel, stride, padding, .. } => {
                Some(LayerGeom::new(kernel, stride, padding))
            }
            LayerSpec::MbConv { kernel, stride, .. } => Some(LayerGeom::new(kernel, stride, Padding::Same)),
            LayerSpec::Activation(_) => Some(LayerGeom::new(1, 1, Padding::Valid)),
            LayerSpec::Gap | LayerSpec::Linear { .. } => None,
        }
    }
}

/// Squeeze ratio inside inverted-residual blocks, relative to input channels.
pub const MBCONV_SE_RATIO: Real = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureShape {
    Map { h: usize, w: usize, c: usize },
    Vector(usize),
}

/// Static per-layer description derived from a spec without instantiating it.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub output: FeatureShape,
    pub rf: Option<ReceptiveField>,
    pub costs: Vec<ConvCost>,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub name: String,
    pub input_channels: usize,
    pub base_resolution: usize,
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose output map feeds the location module.
    pub tap_layer: usize,
    pub feature_dim: usize,
}

fn conv_params(cin: usize, k: usize, cout: usize) -> usize {
    cin * k * k * cout + cout
}

impl BackboneSpec {
    /// Feature extractor of the 224 px ImageNet model (77 px base resolution).
    pub fn paper_imagenet() -> Self {
        use Padding::*;
        let mut layers = vec![LayerSpec::conv(3, 64, 1, Valid, Activation::LEAKY)];
        layers.push(LayerSpec::block(3, 256, 2, Same));
        layers.push(LayerSpec::block(3, 256, 1, Same));
        layers.push(LayerSpec::block(1, 256, 1, Same));
        layers.push(LayerSpec::block(3, 512, 2, Same));
        layers.push(LayerSpec::block(3, 512, 1, Same));
        layers.extend([LayerSpec::block(1, 512, 1, Same), LayerSpec::block(1, 512, 1, Same)]);
        layers.push(LayerSpec::block(3, 1024, 2, Valid));
        layers.push(LayerSpec::block(3, 1024, 1, Same));
        layers.extend(std::iter::repeat_n(LayerSpec::block(1, 1024, 1, Same), 4));
        layers.push(LayerSpec::block(3, 2048, 1, Valid));
        layers.push(LayerSpec::block(3, 2048, 1, Same));
        layers.push(LayerSpec::block(1, 2048, 1, Same));
        layers.push(LayerSpec::conv(1, 512, 1, Same, Activation::LEAKY));
        layers.push(LayerSpec::Gap);
        Self {
            name: "paper-imagenet".into(),
            input_channels: 3,
            base_resolution: 77,
            layers,
            tap_layer: 13,
            feature_dim: 512,
        }
    }

    /// Shape-compatible stand-in for the 224 px EfficientNet-B0 feature
    /// extractor (batch norm omitted).
    pub fn paper_fmow_lite() -> Self {
        let mut layers = vec![LayerSpec::conv(3, 32, 2, Padding::Same, Activation::Silu)];
        layers.push(LayerSpec::mb(1, 3, 16, 1));
        layers.extend([LayerSpec::mb(6, 3, 24, 2), LayerSpec::mb(6, 3, 24, 1)]);
        layers.extend([LayerSpec::mb(6, 5, 40, 2), LayerSpec::mb(6, 5, 40, 1)]);
        layers.extend([LayerSpec::mb(6, 3, 80, 2), LayerSpec::mb(6, 3, 80, 1), LayerSpec::mb(6, 3, 80, 1)]);
        layers.extend(std::iter::repeat_n(LayerSpec::mb(6, 5, 112, 1), 3));
        layers.push(LayerSpec::mb(6, 5, 192, 2));
        layers.extend(std::iter::repeat_n(LayerSpec::mb(6, 5, 192, 1), 3));
        layers.push(LayerSpec::mb(6, 3, 320, 1));
        layers.push(LayerSpec::conv(1, 1280, 1, Padding::Same, Activation::Silu));
        layers.push(LayerSpec::Gap);
        Self {
            name: "paper-fmow-lite".into(),
            input_channels: 3,
            base_resolution: 224,
            layers,
            tap_layer: 8,
            feature_dim: 1280,
        }
    }

    /// Four-layer CNN on 16 px single-channel inputs, small enough to train on a laptop CPU.
    pub fn tiny() -> Self {
        use Padding::Same;
        let act = Activation::LEAKY;
        Self {
            name: "tiny".into(),
            input_channels: 1,
            base_resolution: 16,
            layers: vec![
                LayerSpec::conv(3, 8, 1, Same, act),
                LayerSpec::conv(3, 16, 2, Same, act),
                LayerSpec::conv(3, 16, 1, Same, act),
                LayerSpec::conv(3, 32, 2, Same, act),
                LayerSpec::Gap,
            ],
            tap_layer: 2,
            feature_dim: 32,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-imagenet" => Some(Self::paper_imagenet()),
            "paper-fmow-lite" => Some(Self::paper_fmow_lite()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    /// Shape, receptive field, cost and parameter count after every layer.
    pub fn trace(&self) -> Result<Vec<LayerTrace>> {
        if self.layers.is_empty() {
            return Err(config_err!("backbone {} has no layers", self.name));
        }
        let mut shape = FeatureShape::Map {
            h: self.base_resolution,
            w: self.base_resolution,
            c: self.input_channels,
        };
        let mut rf = ReceptiveField::identity(self.base_resolution);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let name = format!("layer{i}");
            let mut costs = Vec::new();
            let mut params = 0;
            let next = match (layer, shape) {
                (LayerSpec::Conv { kernel, channels, stride, padding, .. }, FeatureShape::Map { h, w, c }) => {
                    let (ho, wo) = out_hw(h, w, *kernel, *stride, *padding)?;
                    costs.push(ConvCost::new(&name, c, *kernel, ho, wo, *channels));
                    params += conv_params(c, *kernel, *channels);
                    FeatureShape::Map { h: ho, w: wo, c: *channels }
                }
                (LayerSpec::ConvBlock { kernel, channels, stride, padding }, FeatureShape::Map { h, w, c }) => {
                    let q = channels / 4;
                    if q == 0 {
                        return Err(config_err!("{name}: block channels {channels} below 4"));
                    }
                    let (ho, wo) = out_hw(h, w, *kernel, *stride, *padding)?;
                    costs.push(ConvCost::new(&format!("{name}.reduce"), c, 1, h, w, q));
                    costs.push(ConvCost::new(&format!("{name}.spatial"), q, *kernel, ho, wo, q));
                    costs.push(ConvCost::new(&format!("{name}.expand"), q, 1, ho, wo, *channels));
                    params += conv_params(c, 1, q) + conv_params(q, *kernel, q) + conv_params(q, 1, *channels);
                    if block_projects(*stride, c, *channels) {
                        costs.push(ConvCost::new(&format!("{name}.shortcut"), c, 1, ho, wo, *channels));
                        params += conv_params(c, 1, *channels);
                    }
                    FeatureShape::Map { h: ho, w: wo, c: *channels }
                }
                (LayerSpec::MbConv { expand, kernel, channels, stride }, FeatureShape::Map { h, w, c }) => {
                    let e = c * expand;
                    let (ho, wo) = out_hw(h, w, *kernel, *stride, Padding::Same)?;
                    if *expand != 1 {
                        costs.push(ConvCost::new(&format!("{name}.expand"), c, 1, h, w, e));
                        params += conv_params(c, 1, e);
                    }
                    costs.push(ConvCost::depthwise(&format!("{name}.depthwise"), *kernel, ho, wo, e));
                    params += kernel * kernel * e + e;
                    let sq = se_width(c, MBCONV_SE_RATIO);
                    costs.push(ConvCost::new(&format!("{name}.se.squeeze"), e, 1, 1, 1, sq));
                    costs.push(ConvCost::new(&format!("{name}.se.excite"), sq, 1, 1, 1, e));
                    params += e * sq + sq + sq * e + e;
                    costs.push(ConvCost::new(&format!("{name}.project"), e, 1, ho, wo, *channels));
                    params += conv_params(e, 1, *channels);
                    FeatureShape::Map { h: ho, w: wo, c: *channels }
                }
                (LayerSpec::Gap, FeatureShape::Map { c, .. }) => FeatureShape::Vector(c),
                (LayerSpec::Linear { units, .. }, FeatureShape::Vector(d)) => {
                    costs.push(ConvCost::new(&name, d, 1, 1, 1, *units));
                    params += d * units + units;
                    FeatureShape::Vector(*units)
                }
                (LayerSpec::Activation(_), s) => s,
                (l, s) => return Err(config_err!("{name}: {l:?} cannot follow output {s:?}")),
            };
            if let (Some(geom), FeatureShape::Map { .. }) = (layer.geom(), next) {
                rf = rf.then(&geom)?;
            }
            let layer_rf = matches!(next, FeatureShape::Map { .. }).then_some(rf);
            out.push(LayerTrace { output: next, rf: layer_rf, costs, params });
            shape = next;
        }
        Ok(out)
    }

    /// Validates the spec and returns the tap map shape and receptive field.
    pub fn validate(&self) -> Result<(FeatureShape, ReceptiveField)> {
        let trace = self.trace()?;
        match trace.last().map(|t| t.output) {
            Some(FeatureShape::Vector(d)) if d == self.feature_dim => {}
            other => {
                return Err(config_err!(
                    "backbone {} must end in a {}-vector, ends in {:?}",
                    self.name,
                    self.feature_dim,
                    other
                ))
            }
        }
        let tap = trace
            .get(self.tap_layer)
            .ok_or_else(|| config_err!("tap layer {} out of range", self.tap_layer))?;
        match (tap.output, tap.rf) {
            (s @ FeatureShape::Map { .. }, Some(rf)) => Ok((s, rf)),
            _ => Err(config_err!("tap layer {} does not output a spatial map", self.tap_layer)),
        }
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.trace()?.iter().map(|t| t.params).sum())
    }

    pub fn costs(&self) -> Result<Vec<ConvCost>> {
        Ok(self.trace()?.into_iter().flat_map(|t| t.costs).collect())
    }

    /// Receptive fields after each spatial layer, for checking layer stacks
    /// against published receptive-field sizes.
    pub fn receptive_fields(&self) -> Result<Vec<ReceptiveField>> {
        let geoms: Vec<LayerGeom> = self.layers.iter().filter_map(|l| l.geom()).collect();
        rf_chain(&geoms, self.base_resolution)
    }
}

fn out_hw(h: usize, w: usize, k: usize, s: usize, p: Padding) -> Result<(usize, usize)> {
    Ok((conv_output_extent(h, k, s, p)?, conv_output_extent(w, k, s, p)?))
}

fn block_projects(stride: usize, cin: usize, cout: usize) -> bool {
    stride > 1 || cin != cout
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(Conv),
    Block { reduce: Conv, spatial: Conv, expand: Conv, shortcut: Option<Conv>, margin: usize },
    MbConv { expand: Option<Conv>, depthwise: Conv, se: SqueezeExcite, project: Conv, residual: bool },
    Gap,
    Linear(Dense),
    Activation(Activation),
}

/// Instantiated feature extraction module.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    layers: Vec<Layer>,
    tap_rf: ReceptiveField,
}

/// Output of one backbone pass.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    /// Final feature vector.
    pub vector: Var,
    /// Output of the tap layer.
    pub tap: Var,
}

impl Backbone {
    pub fn new(spec: BackboneSpec, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        let (_, tap_rf) = spec.validate()?;
        let trace = spec.trace()?;
        let mut cin = spec.input_channels;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let lk = Activation::LEAKY;
        for (i, (l, t)) in spec.layers.iter().zip(&trace).enumerate() {
            let name = format!("backbone.{i}");
            let layer = match *l {
                LayerSpec::Conv { kernel, channels, stride, padding, activation } => Layer::Conv(Conv::new(
                    store, &name, kernel, cin, channels, stride, padding, activation, rng,
                )),
                LayerSpec::ConvBlock { kernel, channels, stride, padding } => {
                    let q = channels / 4;
                    let reduce = Conv::new(store, &format!("{name}.reduce"), 1, cin, q, 1, Padding::Same, lk, rng);
                    let spatial =
                        Conv::new(store, &format!("{name}.spatial"), kernel, q, q, stride, padding, lk, rng);
                    let expand =
                        Conv::new(store, &format!("{name}.expand"), 1, q, channels, 1, Padding::Same, lk, rng);
                    let shortcut = block_projects(stride, cin, channels).then(|| {
                        Conv::new(
                            store,
                            &format!("{name}.shortcut"),
                            1,
                            cin,
                            channels,
                            stride,
                            Padding::Same,
                            Activation::Identity,
                            rng,
                        )
                    });
                    let margin = if padding == Padding::Valid { (kernel - 1) / 2 } else { 0 };
                    Layer::Block { reduce, spatial, expand, shortcut, margin }
                }
                LayerSpec::MbConv { expand, kernel, channels, stride } => {
                    let e = cin * expand;
                    let silu = Activation::Silu;
                    let exp = (expand != 1).then(|| {
                        Conv::new(store, &format!("{name}.expand"), 1, cin, e, 1, Padding::Same, silu, rng)
                    });
                    let depthwise = Conv::depthwise(store, &format!("{name}.depthwise"), kernel, e, stride, silu, rng);
                    let se = SqueezeExcite::new(store, &format!("{name}.se"), e, se_width(cin, MBCONV_SE_RATIO), rng);
                    let project = Conv::new(
                        store,
                        &format!("{name}.project"),
                        1,
                        e,
                        channels,
                        1,
                        Padding::Same,
                        Activation::Identity,
                        rng,
                    );
                    Layer::MbConv { expand: exp, depthwise, se, project, residual: stride == 1 && cin == channels }
                }
                LayerSpec::Gap => Layer::Gap,
                LayerSpec::Linear { units, activation } => {
                    Layer::Linear(Dense::new(store, &name, cin, units, activation, rng))
                }
                LayerSpec::Activation(a) => Layer::Activation(a),
            };
            cin = match t.output {
                FeatureShape::Map { c, .. } => c,
                FeatureShape::Vector(d) => d,
            };
            layers.push(layer);
        }
        Ok(Self { spec, layers, tap_rf })
    }

    pub fn tap_rf(&self) -> &ReceptiveField {
        &self.tap_rf
    }

    /// Runs the image `[base, base, C]` through every layer.
    pub fn forward(&self, g: &mut Graph, image: Var) -> Result<Features> {
        let base = self.spec.base_resolution;
        let expected = [base, base, self.spec.input_channels];
        if g.shape(image) != expected {
            return Err(config_err!(
                "backbone {} expects input {:?}, got {:?}",
                self.spec.name,
                expected,
                g.shape(image)
            ));
        }
        let mut x = image;
        let mut tap = None;
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::Conv(c) => c.forward(g, x)?,
                Layer::Block { reduce, spatial, expand, shortcut, margin } => {
                    let h = reduce.forward(g, x)?;
                    let h = spatial.forward(g, h)?;
                    let h = expand.pre_activation(g, h)?;
                    let mut r = x;
                    if *margin > 0 {
                        let s = g.shape(r).to_vec();
                        r = g.crop(r, *margin, *margin, s[0] - 2 * margin, s[1] - 2 * margin)?;
                    }
                    if let Some(sc) = shortcut {
                        r = sc.forward(g, r)?;
                    }
                    let sum = g.add(h, r)?;
                    g.activation(sum, Activation::LEAKY)
                }
                Layer::MbConv { expand, depthwise, se, project, residual } => {
                    let mut h = x;
                    if let Some(e) = expand {
                        h = e.forward(g, h)?;
                    }
                    h = depthwise.forward(g, h)?;
                    h = se.forward(g, h)?;
                    h = project.forward(g, h)?;
                    if *residual {
                        h = g.add(h, x)?;
                    }
                    h
                }
                Layer::Gap => g.gap(x)?,
                Layer::Linear(d) => d.forward(g, x)?,
                Layer::Activation(a) => g.activation(x, *a),
            };
            if i == self.spec.tap_layer {
                tap = Some(x);
            }
        }
        Ok(Features { vector: x, tap: tap.expect("tap layer validated") })
    }
}
