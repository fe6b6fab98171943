use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent along one axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(shape_err!("kernel and stride must be positive"));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(shape_err!("kernel {kernel} exceeds input extent {input} (VALID)"));
            }
            Ok((input - kernel) / stride + 1)
        }
        Padding::Same => Ok(input.div_ceil(stride)),
    }
}

/// Leading (top/left) zero padding for a SAME convolution.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    pub(crate) fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
        depthwise: bool,
    ) -> Result<Self> {
        if input.len() != 3 {
            return Err(shape_err!("convolution input must be [H, W, C], got {:?}", input));
        }
        let (h, w, cin) = (input[0], input[1], input[2]);
        let (k, cout) = if depthwise {
            if kernel.len() != 3 || kernel[0] != kernel[1] || kernel[2] != cin {
                return Err(shape_err!(
                    "depthwise kernel {:?} incompatible with input {:?}",
                    kernel,
                    input
                ));
            }
            (kernel[0], cin)
        } else {
            if kernel.len() != 4 || kernel[0] != kernel[1] || kernel[2] != cin {
                return Err(shape_err!(
                    "kernel {:?} incompatible with input {:?}: input channels must equal kernel axis 2",
                    kernel,
                    input
                ));
            }
            (kernel[0], kernel[3])
        };
        let out_h = conv_output_extent(h, k, stride, padding)?;
        let out_w = conv_output_extent(w, k, stride, padding)?;
        let (pad_top, pad_left) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => (same_padding(h, k, stride), same_padding(w, k, stride)),
        };
        Ok(Self { h, w, cin, k, cout, stride, pad_top, pad_left, out_h, out_w })
    }

    /// Input coordinate for output `o` and kernel tap `t`, if inside the map.
    #[inline]
    fn src(&self, o: usize, t: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + t).checked_sub(pad)?;
        (p < extent).then_some(p)
    }
}

pub(crate) fn conv2d_forward(x: &Tensor, kernel: &Tensor, g: &ConvGeom) -> Tensor {
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; g.out_h * g.out_w * g.cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = (oy * g.out_w + ox) * g.cout;
            let orow = &mut out[o..o + g.cout];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                    let xi = (iy * g.w + ix) * g.cin;
                    let ki = (ky * g.k + kx) * g.cin;
                    for ci in 0..g.cin {
                        let xv = xd[xi + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let krow = &kd[(ki + ci) * g.cout..(ki + ci + 1) * g.cout];
                        for (ov, &kv) in orow.iter_mut().zip(krow) {
                            *ov += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new([g.out_h, g.out_w, g.cout], out).expect("conv output shape")
}

pub(crate) fn conv2d_grad_input(buf: &mut [Real], grad: &[Real], kernel: &Tensor, g: &ConvGeom) {
    let kd = kernel.data();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = (oy * g.out_w + ox) * g.cout;
            let grow = &grad[o..o + g.cout];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                    let xi = (iy * g.w + ix) * g.cin;
                    let ki = (ky * g.k + kx) * g.cin;
                    for ci in 0..g.cin {
                        let krow = &kd[(ki + ci) * g.cout..(ki + ci + 1) * g.cout];
                        buf[xi + ci] += grow.iter().zip(krow).map(|(a, b)| a * b).sum::<Real>();
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_grad_kernel(buf: &mut [Real], grad: &[Real], x: &Tensor, g: &ConvGeom) {
    let xd = x.data();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = (oy * g.out_w + ox) * g.cout;
            let grow = &grad[o..o + g.cout];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                    let xi = (iy * g.w + ix) * g.cin;
                    let ki = (ky * g.k + kx) * g.cin;
                    for ci in 0..g.cin {
                        let xv = xd[xi + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let brow = &mut buf[(ki + ci) * g.cout..(ki + ci + 1) * g.cout];
                        for (b, &gv) in brow.iter_mut().zip(grow) {
                            *b += xv * gv;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn depthwise_forward(x: &Tensor, kernel: &Tensor, g: &ConvGeom) -> Tensor {
    let (xd, kd) = (x.data(), kernel.data());
    let c = g.cin;
    let mut out = vec![0.0; g.out_h * g.out_w * c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = (oy * g.out_w + ox) * c;
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                    let xi = (iy * g.w + ix) * c;
                    let ki = (ky * g.k + kx) * c;
                    for ch in 0..c {
                        out[o + ch] += xd[xi + ch] * kd[ki + ch];
                    }
                }
            }
        }
    }
    Tensor::new([g.out_h, g.out_w, c], out).expect("depthwise output shape")
}

pub(crate) fn depthwise_grad_input(buf: &mut [Real], grad: &[Real], kernel: &Tensor, g: &ConvGeom) {
    let kd = kernel.data();
    let c = g.cin;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = (oy * g.out_w + ox) * c;
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                    let xi = (iy * g.w + ix) * c;
                    let ki = (ky * g.k + kx) * c;
                    for ch in 0..c {
                        buf[xi + ch] += grad[o + ch] * kd[ki + ch];
                    }
                }
            }
        }
    }
}

pub(crate) fn depthwise_grad_kernel(buf: &mut [Real], grad: &[Real], x: &Tensor, g: &ConvGeom) {
    let xd = x.data();
    let c = g.cin;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = (oy * g.out_w + ox) * c;
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                    let xi = (iy * g.w + ix) * c;
                    let ki = (ky * g.k + kx) * c;
                    for ch in 0..c {
                        buf[ki + ch] += grad[o + ch] * xd[xi + ch];
                    }
                }
            }
        }
    }
}
