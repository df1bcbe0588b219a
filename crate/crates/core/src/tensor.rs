//! Dense height × width × channel tensors and the handful of layer
//! primitives the filter network needs, forward and backward.
//!
//! Samples are stored row-major in (row, column, channel) order. Convolutions
//! are "same" cross-correlations with zero padding; kernel sizes must be odd.

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width, channels);
        ensure!(
            data.len() == shape.len(),
            "tensor {height}x{width}x{channels} needs {} samples, got {}",
            shape.len(),
            data.len()
        );
        Ok(Tensor { shape, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        let shape = Shape::new(height, width, channels);
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Tensor {
            shape: Shape::new(height, width, channels),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.shape.width + col) * self.shape.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.data[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of squared samples.
    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Convolution weights in `[out][in][row][col]` order plus one bias per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    kernel_height: usize,
    kernel_width: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_height: usize,
        kernel_width: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        ensure!(
            out_channels > 0 && in_channels > 0,
            "kernel channel counts must be positive"
        );
        ensure!(
            kernel_height % 2 == 1 && kernel_width % 2 == 1,
            "kernel size {kernel_height}x{kernel_width} must be odd"
        );
        let count = out_channels * in_channels * kernel_height * kernel_width;
        ensure!(
            weights.len() == count,
            "kernel needs {count} weights, got {}",
            weights.len()
        );
        ensure!(
            bias.len() == out_channels,
            "kernel needs {out_channels} biases, got {}",
            bias.len()
        );
        Ok(ConvKernel {
            out_channels,
            in_channels,
            kernel_height,
            kernel_width,
            weights,
            bias,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel_height: usize,
        kernel_width: usize,
    ) -> Self {
        assert!(kernel_height % 2 == 1 && kernel_width % 2 == 1);
        ConvKernel {
            out_channels,
            in_channels,
            kernel_height,
            kernel_width,
            weights: vec![0.0; out_channels * in_channels * kernel_height * kernel_width],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_height(&self) -> usize {
        self.kernel_height
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel_width
    }

    /// Number of weights, biases excluded.
    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Weights and biases, mutably, at the same time.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    #[inline]
    pub fn weight(&self, out: usize, input: usize, row: usize, col: usize) -> f64 {
        self.weights[((out * self.in_channels + input) * self.kernel_height + row)
            * self.kernel_width
            + col]
    }

    /// A kernel with the same shape and every weight and bias zero.
    pub fn zeros_like(&self) -> Self {
        ConvKernel::zeros(
            self.out_channels,
            self.in_channels,
            self.kernel_height,
            self.kernel_width,
        )
    }

    /// Weights re-laid out as `[in][row][col][out]` so the innermost loop of
    /// every kernel below runs over contiguous output channels.
    fn packed(&self) -> Vec<f64> {
        let (co_n, ci_n, kh, kw) = (
            self.out_channels,
            self.in_channels,
            self.kernel_height,
            self.kernel_width,
        );
        let mut packed = vec![0.0; self.weights.len()];
        for co in 0..co_n {
            for ci in 0..ci_n {
                for kr in 0..kh {
                    for kc in 0..kw {
                        packed[((ci * kh + kr) * kw + kc) * co_n + co] =
                            self.weight(co, ci, kr, kc);
                    }
                }
            }
        }
        packed
    }

    fn unpack_into(&self, packed: &[f64], weights: &mut [f64]) {
        let (co_n, ci_n, kh, kw) = (
            self.out_channels,
            self.in_channels,
            self.kernel_height,
            self.kernel_width,
        );
        for co in 0..co_n {
            for ci in 0..ci_n {
                for kr in 0..kh {
                    for kc in 0..kw {
                        weights[((co * ci_n + ci) * kh + kr) * kw + kc] =
                            packed[((ci * kh + kr) * kw + kc) * co_n + co];
                    }
                }
            }
        }
    }
}

/// Valid kernel-tap range along one axis for output position `pos` so that
/// `pos + tap - pad` stays inside `[0, extent)`.
#[inline(always)]
fn tap_range(pos: usize, pad: usize, taps: usize, extent: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(pos);
    let hi = taps.min(extent + pad - pos);
    (lo, hi)
}

/// Geometry shared by the forward and backward kernels.
#[derive(Clone, Copy)]
struct ConvDims {
    h: usize,
    w: usize,
    ci_n: usize,
    co_n: usize,
    kh: usize,
    kw: usize,
}

impl ConvDims {
    fn new(input: &Tensor, kernel: &ConvKernel) -> Self {
        ConvDims {
            h: input.height(),
            w: input.width(),
            ci_n: input.channels(),
            co_n: kernel.out_channels,
            kh: kernel.kernel_height,
            kw: kernel.kernel_width,
        }
    }
}

/// Runs `$body` through a copy compiled for the widest vector extension the
/// CPU offers. Rust never contracts `a * b + c` into a fused multiply-add, so both
/// copies perform the same IEEE operations in the same order and agree
/// bit for bit.
macro_rules! dispatch_simd {
    ($name:ident ( $($arg:ident : $ty:ty),* ) $body:block) => {
        fn $name($($arg: $ty),*) {
            #[inline(always)]
            fn body($($arg: $ty),*) $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f")]
                unsafe fn widest($($arg: $ty),*) {
                    body($($arg),*)
                }
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) {
                    body($($arg),*)
                }
                // SAFETY: each variant runs only after its CPU feature was detected.
                if std::is_x86_feature_detected!("avx512f") {
                    return unsafe { widest($($arg),*) };
                }
                if std::is_x86_feature_detected!("avx2") {
                    return unsafe { wide($($arg),*) };
                }
            }
            body($($arg),*)
        }
    };
}

/// Forward kernel with the output-channel accumulators held in fixed-size
/// arrays so they stay in registers. Interior columns are computed two at a
/// time; each output sample still sums its terms in the documented order.
#[inline(always)]
fn forward_fixed<const CO: usize>(
    d: ConvDims,
    src: &[f64],
    packed: &[f64],
    bias: &[f64],
    dst: &mut [f64],
) {
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let tap = |ci: usize, kr: usize, kc: usize| -> &[f64; CO] {
        packed[((ci * d.kh + kr) * d.kw + kc) * CO..][..CO]
            .try_into()
            .unwrap()
    };
    for r in 0..d.h {
        let (kr_lo, kr_hi) = tap_range(r, ph, d.kh, d.h);
        let mut c = 0;
        while c < d.w {
            let (kc_lo, kc_hi) = tap_range(c, pw, d.kw, d.w);
            let paired = c + 1 < d.w && tap_range(c + 1, pw, d.kw, d.w) == (kc_lo, kc_hi);
            if paired {
                let mut acc0 = [0.0f64; CO];
                let mut acc1 = [0.0f64; CO];
                for ci in 0..d.ci_n {
                    for kr in kr_lo..kr_hi {
                        let row = r + kr - ph;
                        for kc in kc_lo..kc_hi {
                            let at = (row * d.w + c + kc - pw) * d.ci_n + ci;
                            let (x0, x1) = (src[at], src[at + d.ci_n]);
                            let taps = tap(ci, kr, kc);
                            for k in 0..CO {
                                acc0[k] += x0 * taps[k];
                                acc1[k] += x1 * taps[k];
                            }
                        }
                    }
                }
                let out = &mut dst[(r * d.w + c) * CO..][..2 * CO];
                for k in 0..CO {
                    out[k] = acc0[k] + bias[k];
                    out[CO + k] = acc1[k] + bias[k];
                }
                c += 2;
            } else {
                let mut acc = [0.0f64; CO];
                for ci in 0..d.ci_n {
                    for kr in kr_lo..kr_hi {
                        let row = r + kr - ph;
                        for kc in kc_lo..kc_hi {
                            let x = src[(row * d.w + c + kc - pw) * d.ci_n + ci];
                            let taps = tap(ci, kr, kc);
                            for k in 0..CO {
                                acc[k] += x * taps[k];
                            }
                        }
                    }
                }
                let out = &mut dst[(r * d.w + c) * CO..][..CO];
                for k in 0..CO {
                    out[k] = acc[k] + bias[k];
                }
                c += 1;
            }
        }
    }
}

#[inline(always)]
fn forward_any(d: ConvDims, src: &[f64], packed: &[f64], bias: &[f64], dst: &mut [f64]) {
    let (ph, pw, co_n) = (d.kh / 2, d.kw / 2, d.co_n);
    for r in 0..d.h {
        let (kr_lo, kr_hi) = tap_range(r, ph, d.kh, d.h);
        for c in 0..d.w {
            let (kc_lo, kc_hi) = tap_range(c, pw, d.kw, d.w);
            let acc = &mut dst[(r * d.w + c) * co_n..][..co_n];
            for ci in 0..d.ci_n {
                for kr in kr_lo..kr_hi {
                    let row = r + kr - ph;
                    for kc in kc_lo..kc_hi {
                        let x = src[(row * d.w + c + kc - pw) * d.ci_n + ci];
                        let taps = &packed[((ci * d.kh + kr) * d.kw + kc) * co_n..][..co_n];
                        for (a, &k) in acc.iter_mut().zip(taps) {
                            *a += x * k;
                        }
                    }
                }
            }
            for (a, &b) in acc.iter_mut().zip(bias) {
                *a += b;
            }
        }
    }
}

dispatch_simd!(conv_forward_kernel(d: ConvDims, src: &[f64], packed: &[f64], bias: &[f64], dst: &mut [f64]) {
    match d.co_n {
        32 => forward_fixed::<32>(d, src, packed, bias, dst),
        16 => forward_fixed::<16>(d, src, packed, bias, dst),
        8 => forward_fixed::<8>(d, src, packed, bias, dst),
        1 => forward_fixed::<1>(d, src, packed, bias, dst),
        _ => forward_any(d, src, packed, bias, dst),
    }
});

/// Zero-padded "same" cross-correlation plus per-channel bias.
///
/// For every output sample the sum runs input channel outermost, then kernel
/// row, then kernel column; the bias is added last. The order is fixed so
/// results are bit-reproducible.
pub fn conv2d_same(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    ensure!(
        input.channels() == kernel.in_channels,
        "conv input has {} channels, kernel expects {}",
        input.channels(),
        kernel.in_channels
    );
    let d = ConvDims::new(input, kernel);
    let packed = kernel.packed();
    let mut out = Tensor::zeros(d.h, d.w, d.co_n);
    conv_forward_kernel(d, input.data(), &packed, &kernel.bias, out.data_mut());
    Ok(out)
}

/// Gradients of `sum(upstream ⊙ conv2d_same(input, kernel))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    pub input: Tensor,
    /// Same layout as [`ConvKernel::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_same_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    upstream: &Tensor,
) -> Result<ConvGradients> {
    let (weights, bias, input_grad) = conv_backward(input, kernel, upstream, true)?;
    Ok(ConvGradients {
        input: input_grad.expect("input gradient requested"),
        weights,
        bias,
    })
}

/// Like [`conv2d_same_backward`] but skips the input gradient, for layers
/// that read the network input directly.
pub(crate) fn conv2d_same_backward_params(
    input: &Tensor,
    kernel: &ConvKernel,
    upstream: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (weights, bias, _) = conv_backward(input, kernel, upstream, false)?;
    Ok((weights, bias))
}

/// Weight gradient for one output-channel count, in packed
/// `[in][row][col][out]` layout: `dW[ci,kr,kc,:] = Σ_pixels x[pixel+tap, ci] · g[pixel, :]`,
/// pixels summed in raster order with the accumulator in registers.
#[inline(always)]
fn weight_grad_fixed<const CO: usize>(
    d: ConvDims,
    src: &[f64],
    grad: &[f64],
    packed_grad: &mut [f64],
) {
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    for ci in 0..d.ci_n {
        for kr in 0..d.kh {
            // Output rows whose tap `kr` lands inside the input.
            let r_lo = ph.saturating_sub(kr);
            let r_hi = d.h.min(d.h + ph - kr);
            for kc in 0..d.kw {
                let c_lo = pw.saturating_sub(kc);
                let c_hi = d.w.min(d.w + pw - kc);
                let mut acc = [0.0f64; CO];
                for r in r_lo..r_hi {
                    let row = r + kr - ph;
                    for c in c_lo..c_hi {
                        let x = src[(row * d.w + c + kc - pw) * d.ci_n + ci];
                        let g: &[f64; CO] = grad[(r * d.w + c) * CO..][..CO].try_into().unwrap();
                        for k in 0..CO {
                            acc[k] += x * g[k];
                        }
                    }
                }
                packed_grad[((ci * d.kh + kr) * d.kw + kc) * CO..][..CO].copy_from_slice(&acc);
            }
        }
    }
}

#[inline(always)]
fn weight_grad_any(d: ConvDims, src: &[f64], grad: &[f64], packed_grad: &mut [f64]) {
    let (ph, pw, co_n) = (d.kh / 2, d.kw / 2, d.co_n);
    for ci in 0..d.ci_n {
        for kr in 0..d.kh {
            let r_lo = ph.saturating_sub(kr);
            let r_hi = d.h.min(d.h + ph - kr);
            for kc in 0..d.kw {
                let c_lo = pw.saturating_sub(kc);
                let c_hi = d.w.min(d.w + pw - kc);
                let acc = &mut packed_grad[((ci * d.kh + kr) * d.kw + kc) * co_n..][..co_n];
                for r in r_lo..r_hi {
                    let row = r + kr - ph;
                    for c in c_lo..c_hi {
                        let x = src[(row * d.w + c + kc - pw) * d.ci_n + ci];
                        let g = &grad[(r * d.w + c) * co_n..][..co_n];
                        for (a, &gv) in acc.iter_mut().zip(g) {
                            *a += x * gv;
                        }
                    }
                }
            }
        }
    }
}

dispatch_simd!(weight_grad_kernel(d: ConvDims, src: &[f64], grad: &[f64], packed_grad: &mut [f64]) {
    match d.co_n {
        32 => weight_grad_fixed::<32>(d, src, grad, packed_grad),
        16 => weight_grad_fixed::<16>(d, src, grad, packed_grad),
        8 => weight_grad_fixed::<8>(d, src, grad, packed_grad),
        1 => weight_grad_fixed::<1>(d, src, grad, packed_grad),
        _ => weight_grad_any(d, src, grad, packed_grad),
    }
});

/// Input gradient gathered per input pixel, `CH` input channels at a time:
/// `dX[y,x,ci] = Σ_taps Σ_co g[y−kr+ph, x−kc+pw, co] · W[co,ci,kr,kc]`.
/// `transposed` holds the weights as `[out][row][col][in]`.
#[inline(always)]
fn input_grad_chunked<const CH: usize>(
    d: ConvDims,
    grad: &[f64],
    transposed: &[f64],
    input_grad: &mut [f64],
) {
    let (ph, pw, co_n, ci_n) = (d.kh / 2, d.kw / 2, d.co_n, d.ci_n);
    for y in 0..d.h {
        // Taps kr for which output row y + ph - kr exists.
        let kr_lo = (y + ph + 1).saturating_sub(d.h);
        let kr_hi = d.kh.min(y + ph + 1);
        for x in 0..d.w {
            let kc_lo = (x + pw + 1).saturating_sub(d.w);
            let kc_hi = d.kw.min(x + pw + 1);
            for chunk in (0..ci_n).step_by(CH) {
                let mut acc = [0.0f64; CH];
                for kr in kr_lo..kr_hi {
                    let r = y + ph - kr;
                    for kc in kc_lo..kc_hi {
                        let c = x + pw - kc;
                        let g = &grad[(r * d.w + c) * co_n..][..co_n];
                        for (co, &gv) in g.iter().enumerate() {
                            let taps: &[f64; CH] = transposed
                                [((co * d.kh + kr) * d.kw + kc) * ci_n + chunk..][..CH]
                                .try_into()
                                .unwrap();
                            for k in 0..CH {
                                acc[k] += gv * taps[k];
                            }
                        }
                    }
                }
                input_grad[(y * d.w + x) * ci_n + chunk..][..CH].copy_from_slice(&acc);
            }
        }
    }
}

dispatch_simd!(input_grad_kernel(d: ConvDims, grad: &[f64], transposed: &[f64], input_grad: &mut [f64]) {
    match d.ci_n {
        n if n % 16 == 0 => input_grad_chunked::<16>(d, grad, transposed, input_grad),
        n if n % 8 == 0 => input_grad_chunked::<8>(d, grad, transposed, input_grad),
        _ => input_grad_chunked::<1>(d, grad, transposed, input_grad),
    }
});

fn conv_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    upstream: &Tensor,
    want_input: bool,
) -> Result<(Vec<f64>, Vec<f64>, Option<Tensor>)> {
    ensure!(
        input.channels() == kernel.in_channels,
        "conv input has {} channels, kernel expects {}",
        input.channels(),
        kernel.in_channels
    );
    let expected = Shape::new(input.height(), input.width(), kernel.out_channels);
    ensure!(
        upstream.shape() == expected,
        "upstream gradient shape {:?} does not match conv output {:?}",
        upstream.shape(),
        expected
    );
    let d = ConvDims::new(input, kernel);
    let grad = upstream.data();

    let mut bias = vec![0.0; d.co_n];
    for g in grad.chunks_exact(d.co_n) {
        for (b, &gv) in bias.iter_mut().zip(g) {
            *b += gv;
        }
    }

    let mut packed_grad = vec![0.0; kernel.weights.len()];
    weight_grad_kernel(d, input.data(), grad, &mut packed_grad);
    let mut weights = vec![0.0; kernel.weights.len()];
    kernel.unpack_into(&packed_grad, &mut weights);

    let input_grad = want_input.then(|| {
        // Kernel weights are already [out][in][row][col]; re-lay as [out][row][col][in].
        let mut transposed = vec![0.0; kernel.weights.len()];
        for co in 0..d.co_n {
            for ci in 0..d.ci_n {
                for kr in 0..d.kh {
                    for kc in 0..d.kw {
                        transposed[((co * d.kh + kr) * d.kw + kc) * d.ci_n + ci] =
                            kernel.weight(co, ci, kr, kc);
                    }
                }
            }
        }
        let mut ig = Tensor::zeros(d.h, d.w, d.ci_n);
        input_grad_kernel(d, grad, &transposed, ig.data_mut());
        ig
    });
    Ok((weights, bias, input_grad))
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub(crate) fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
}

/// Passes `upstream` through where the ReLU output was positive.
pub fn relu_backward(activated: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    ensure!(
        activated.shape() == upstream.shape(),
        "relu gradient shape {:?} does not match activation {:?}",
        upstream.shape(),
        activated.shape()
    );
    let data = activated
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: activated.shape(),
        data,
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure!(
        a.shape() == b.shape(),
        "cannot add tensors of shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    );
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor {
        shape: a.shape(),
        data,
    })
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure!(
        a.height() == b.height() && a.width() == b.width(),
        "cannot concatenate {}x{} and {}x{} feature maps",
        a.height(),
        a.width(),
        b.height(),
        b.width()
    );
    let (ca, cb) = (a.channels(), b.channels());
    let pixels = a.height() * a.width();
    let mut data = Vec::with_capacity(pixels * (ca + cb));
    for p in 0..pixels {
        data.extend_from_slice(&a.data()[p * ca..(p + 1) * ca]);
        data.extend_from_slice(&b.data()[p * cb..(p + 1) * cb]);
    }
    Ok(Tensor {
        shape: Shape::new(a.height(), a.width(), ca + cb),
        data,
    })
}

/// Inverse of [`concat_channels`]: the first `at` channels and the rest.
pub fn split_channels(t: &Tensor, at: usize) -> Result<(Tensor, Tensor)> {
    ensure!(
        at <= t.channels(),
        "split point {at} beyond {} channels",
        t.channels()
    );
    let (ca, cb) = (at, t.channels() - at);
    let pixels = t.height() * t.width();
    let mut a = Vec::with_capacity(pixels * ca);
    let mut b = Vec::with_capacity(pixels * cb);
    for chunk in t.data().chunks_exact(t.channels().max(1)).take(pixels) {
        a.extend_from_slice(&chunk[..ca]);
        b.extend_from_slice(&chunk[ca..]);
    }
    Ok((
        Tensor {
            shape: Shape::new(t.height(), t.width(), ca),
            data: a,
        },
        Tensor {
            shape: Shape::new(t.height(), t.width(), cb),
            data: b,
        },
    ))
}
