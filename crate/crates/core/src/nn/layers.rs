//! Layer primitives with explicit backward passes.
//!
//! Layers never hold activations. Callers keep the forward inputs and outputs
//! they need and hand them back to `backward`, which accumulates parameter
//! gradients into [`Param::grad`] and returns the input gradient.

use serde::{Deserialize, Serialize};

use super::scalar::{gemm, Op};
use super::{Scalar, Tensor};

/// A named trainable array and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param shape");
        let grad = vec![T::ZERO; value.len()];
        Param {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::ZERO);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Leaky rectifier with negative slope 0.1.
    LeakyRelu,
    Relu,
}

impl Activation {
    fn slope(self) -> f64 {
        match self {
            Activation::LeakyRelu => 0.1,
            Activation::Relu => 0.0,
        }
    }

    pub fn forward_inplace<T: Scalar>(self, x: &mut [T]) {
        let s = T::from_f64(self.slope());
        for v in x {
            if *v <= T::ZERO {
                *v *= s;
            }
        }
    }

    /// Multiplies `grad` by the derivative, evaluated from the forward output.
    pub fn backward_inplace<T: Scalar>(self, output: &[T], grad: &mut [T]) {
        let s = T::from_f64(self.slope());
        for (g, &y) in grad.iter_mut().zip(output) {
            if y <= T::ZERO {
                *g *= s;
            }
        }
    }
}

/// Stride-1 convolution with a square odd kernel and zero "same" padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// `weight` is `[out, in, k, k]` row-major.
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, weight: Vec<T>) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                weight,
            ),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], vec![T::ZERO; out_channels]),
        }
    }

    fn patch_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels, self.in_channels, "{}: input channels", self.weight.name);
        let s = x.spatial();
        let mut out = Tensor::zeros(self.out_channels, x.batch, x.height, x.width);
        for (o, row) in out.data.chunks_exact_mut(s).enumerate() {
            row.fill(self.bias.value[o]);
        }
        let col;
        let cols: &[T] = if self.kernel == 1 {
            &x.data
        } else {
            col = im2col(x, self.kernel);
            &col
        };
        gemm(
            self.out_channels,
            self.patch_rows(),
            s,
            &self.weight.value,
            Op::N,
            cols,
            Op::N,
            T::ONE,
            &mut out.data,
        );
        out
    }

    /// Accumulates weight and bias gradients for upstream gradient `dout`
    /// and returns the input gradient when `need_input_grad` is set.
    pub fn backward(&mut self, x: &Tensor<T>, dout: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let s = x.spatial();
        assert_eq!(
            dout.data.len(),
            self.out_channels * s,
            "{}: grad shape",
            self.weight.name
        );
        for (o, row) in dout.data.chunks_exact(s).enumerate() {
            let mut acc = T::ZERO;
            for &v in row {
                acc += v;
            }
            self.bias.grad[o] += acc;
        }
        let col;
        let cols: &[T] = if self.kernel == 1 {
            &x.data
        } else {
            col = im2col(x, self.kernel);
            &col
        };
        gemm(
            self.out_channels,
            s,
            self.patch_rows(),
            &dout.data,
            Op::N,
            cols,
            Op::T,
            T::ONE,
            &mut self.weight.grad,
        );
        if !need_input_grad {
            return None;
        }
        let mut dcol = vec![T::ZERO; self.patch_rows() * s];
        gemm(
            self.patch_rows(),
            self.out_channels,
            s,
            &self.weight.value,
            Op::T,
            &dout.data,
            Op::N,
            T::ZERO,
            &mut dcol,
        );
        if self.kernel == 1 {
            return Some(Tensor::from_data(x.channels, x.batch, x.height, x.width, dcol));
        }
        Some(col2im(&dcol, x.channels, x.batch, x.height, x.width, self.kernel))
    }
}

/// Unfolds every `k x k` zero-padded neighbourhood into a column:
/// row `(c, ky, kx)`, column `(n, y, x)`.
fn im2col<T: Scalar>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let (h, w) = (x.height, x.width);
    let s = x.spatial();
    let r = (k / 2) as isize;
    let mut col = vec![T::ZERO; x.channels * k * k * s];
    let mut rows = col.chunks_exact_mut(s);
    for c in 0..x.channels {
        for ky in 0..k {
            for kx in 0..k {
                let dst = rows.next().unwrap();
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for b in 0..x.batch {
                    let plane = x.image(c, b);
                    for yy in 0..h {
                        let sy = yy as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let out = &mut dst[(b * h + yy) * w..(b * h + yy + 1) * w];
                        shift_copy(src, out, dx);
                    }
                }
            }
        }
    }
    col
}

/// `out[i] = src[i + shift]` where in range; other entries untouched.
#[inline]
fn shift_copy<T: Copy>(src: &[T], out: &mut [T], shift: isize) {
    let w = src.len() as isize;
    let lo = (-shift).max(0) as usize;
    let hi = (w - shift).min(w) as usize;
    if lo < hi {
        let s0 = (lo as isize + shift) as usize;
        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
    }
}

/// Adjoint of [`im2col`].
fn col2im<T: Scalar>(dcol: &[T], channels: usize, batch: usize, h: usize, w: usize, k: usize) -> Tensor<T> {
    let s = batch * h * w;
    let r = (k / 2) as isize;
    let mut dx = Tensor::zeros(channels, batch, h, w);
    let mut rows = dcol.chunks_exact(s);
    for c in 0..channels {
        let chan = &mut dx.data[c * s..(c + 1) * s];
        for ky in 0..k {
            for kx in 0..k {
                let src = rows.next().unwrap();
                let dy = ky as isize - r;
                let dxs = kx as isize - r;
                for b in 0..batch {
                    for yy in 0..h {
                        let sy = yy as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let grad_row = &src[(b * h + yy) * w..(b * h + yy + 1) * w];
                        let tgt = &mut chan[(b * h + sy as usize) * w..(b * h + sy as usize + 1) * w];
                        let lo = (-dxs).max(0) as usize;
                        let hi = (w as isize - dxs).min(w as isize) as usize;
                        for i in lo..hi {
                            tgt[(i as isize + dxs) as usize] += grad_row[i];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Transposed convolution with kernel 2 and stride 2: every input pixel
/// paints a disjoint 2x2 output block, doubling both spatial dims.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2x2<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out, 2, 2, in]` row-major.
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> ConvTranspose2x2<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, weight: Vec<T>) -> Self {
        ConvTranspose2x2 {
            in_channels,
            out_channels,
            weight: Param::new(format!("{name}.weight"), vec![out_channels, 2, 2, in_channels], weight),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], vec![T::ZERO; out_channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels, self.in_channels, "{}: input channels", self.weight.name);
        let s = x.spatial();
        let mut taps = vec![T::ZERO; self.out_channels * 4 * s];
        gemm(
            self.out_channels * 4,
            self.in_channels,
            s,
            &self.weight.value,
            Op::N,
            &x.data,
            Op::N,
            T::ZERO,
            &mut taps,
        );
        let (h, w) = (x.height, x.width);
        let mut out = Tensor::zeros(self.out_channels, x.batch, 2 * h, 2 * w);
        let os = out.spatial();
        for o in 0..self.out_channels {
            let bias = self.bias.value[o];
            let chan = &mut out.data[o * os..(o + 1) * os];
            for tap in 0..4 {
                let (ky, kx) = (tap / 2, tap % 2);
                let src = &taps[(o * 4 + tap) * s..(o * 4 + tap + 1) * s];
                for b in 0..x.batch {
                    for yy in 0..h {
                        let row = &src[(b * h + yy) * w..(b * h + yy + 1) * w];
                        let orow = (b * 2 * h + 2 * yy + ky) * 2 * w;
                        for (xx, &v) in row.iter().enumerate() {
                            chan[orow + 2 * xx + kx] = v + bias;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
        let s = x.spatial();
        let (h, w) = (x.height, x.width);
        let os = dout.spatial();
        let mut dtaps = vec![T::ZERO; self.out_channels * 4 * s];
        for o in 0..self.out_channels {
            let chan = &dout.data[o * os..(o + 1) * os];
            let mut acc = T::ZERO;
            for &v in chan {
                acc += v;
            }
            self.bias.grad[o] += acc;
            for tap in 0..4 {
                let (ky, kx) = (tap / 2, tap % 2);
                let dst = &mut dtaps[(o * 4 + tap) * s..(o * 4 + tap + 1) * s];
                for b in 0..x.batch {
                    for yy in 0..h {
                        let orow = (b * 2 * h + 2 * yy + ky) * 2 * w;
                        let row = &mut dst[(b * h + yy) * w..(b * h + yy + 1) * w];
                        for (xx, v) in row.iter_mut().enumerate() {
                            *v = chan[orow + 2 * xx + kx];
                        }
                    }
                }
            }
        }
        gemm(
            self.out_channels * 4,
            s,
            self.in_channels,
            &dtaps,
            Op::N,
            &x.data,
            Op::T,
            T::ONE,
            &mut self.weight.grad,
        );
        let mut dx = Tensor::zeros(x.channels, x.batch, h, w);
        gemm(
            self.in_channels,
            self.out_channels * 4,
            s,
            &self.weight.value,
            Op::T,
            &dtaps,
            Op::N,
            T::ZERO,
            &mut dx.data,
        );
        dx
    }
}

/// 2x2 max pooling, stride 2. Dims must be even.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, x.batch, h, w);
    let ip = x.plane();
    for (pi, dst) in out.data.chunks_exact_mut(h * w).enumerate() {
        let src = &x.data[pi * ip..(pi + 1) * ip];
        for i in 0..h {
            for j in 0..w {
                let a = 2 * i * x.width + 2 * j;
                let m = [src[a], src[a + 1], src[a + x.width], src[a + x.width + 1]]
                    .into_iter()
                    .fold(src[a], |m, v| if v > m { v } else { m });
                dst[i * w + j] = m;
            }
        }
    }
    out
}

/// Routes each pooled gradient to the first maximal input of its window.
pub fn max_pool2_backward<T: Scalar>(x: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dout.height, dout.width);
    let mut dx = Tensor::zeros(x.channels, x.batch, x.height, x.width);
    let ip = x.plane();
    for (pi, g) in dout.data.chunks_exact(h * w).enumerate() {
        let src = &x.data[pi * ip..(pi + 1) * ip];
        let dst = &mut dx.data[pi * ip..(pi + 1) * ip];
        for i in 0..h {
            for j in 0..w {
                let a = 2 * i * x.width + 2 * j;
                let cands = [a, a + 1, a + x.width, a + x.width + 1];
                let mut best = a;
                for &c in &cands[1..] {
                    if src[c] > src[best] {
                        best = c;
                    }
                }
                dst[best] += g[i * w + j];
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height, x.width);
    let mut out = Tensor::zeros(x.channels, x.batch, 2 * h, 2 * w);
    for (src, dst) in x.data.chunks_exact(h * w).zip(out.data.chunks_exact_mut(4 * h * w)) {
        for i in 0..2 * h {
            let srow = &src[(i / 2) * w..(i / 2 + 1) * w];
            let drow = &mut dst[i * 2 * w..(i + 1) * 2 * w];
            for (j, d) in drow.iter_mut().enumerate() {
                *d = srow[j / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(dout: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dout.height / 2, dout.width / 2);
    let mut dx = Tensor::zeros(dout.channels, dout.batch, h, w);
    for (src, dst) in dout.data.chunks_exact(4 * h * w).zip(dx.data.chunks_exact_mut(h * w)) {
        for i in 0..2 * h {
            for j in 0..2 * w {
                dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, n: usize, h: usize, w: usize) -> Tensor<f64> {
        let len = c * n * h * w;
        Tensor::from_data(c, n, h, w, (0..len).map(|i| ((i * 37) % 11) as f64 - 5.0).collect())
    }

    /// Direct six-loop convolution, independent of the im2col path.
    fn conv_naive(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let k = conv.kernel;
        let r = (k / 2) as isize;
        let mut out = Tensor::zeros(conv.out_channels, x.batch, x.height, x.width);
        for o in 0..conv.out_channels {
            for b in 0..x.batch {
                for y in 0..x.height {
                    for xx in 0..x.width {
                        let mut acc = conv.bias.value[o];
                        for c in 0..conv.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - r;
                                    let sx = xx as isize + kx as isize - r;
                                    if sy < 0 || sx < 0 || sy >= x.height as isize || sx >= x.width as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((o * conv.in_channels + c) * k + ky) * k + kx];
                                    acc += wv * x.image(c, b)[sy as usize * x.width + sx as usize];
                                }
                            }
                        }
                        let idx = ((o * x.batch + b) * x.height + y) * x.width + xx;
                        out.data[idx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv3_matches_naive() {
        let x = ramp(3, 2, 5, 4);
        let w: Vec<f64> = (0..2 * 3 * 9).map(|i| ((i * 13) % 7) as f64 * 0.1 - 0.3).collect();
        let mut conv = Conv2d::new("c", 3, 2, 3, w);
        conv.bias.value = vec![0.5, -0.25];
        let got = conv.forward(&x);
        let want = conv_naive(&x, &conv);
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_input_grad_is_adjoint() {
        // <conv(x), g> - <bias term> == <x, conv^T(g)> for the linear part
        let x = ramp(2, 2, 4, 6);
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 5) % 9) as f64 * 0.1 - 0.4).collect();
        let mut conv = Conv2d::new("c", 2, 3, 3, w);
        let y = conv.forward(&x);
        let g = ramp(3, 2, 4, 6);
        let dx = conv.backward(&x, &g, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn transposed_conv_paints_disjoint_blocks() {
        let x = Tensor::from_data(1, 1, 1, 2, vec![1.0, 2.0]);
        let mut up = ConvTranspose2x2::new("u", 1, 1, vec![1.0, 2.0, 3.0, 4.0]);
        up.bias.value = vec![0.5];
        let y = up.forward(&x);
        assert_eq!([y.height, y.width], [2, 4]);
        assert_eq!(y.data, vec![1.5, 2.5, 2.5, 4.5, 3.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn transposed_conv_input_grad_is_adjoint() {
        let x = ramp(3, 2, 3, 2);
        let w: Vec<f64> = (0..2 * 4 * 3).map(|i| i as f64 * 0.05 - 0.5).collect();
        let mut up = ConvTranspose2x2::new("u", 3, 2, w);
        let y = up.forward(&x);
        let g = ramp(2, 2, 6, 4);
        let dx = up.backward(&x, &g);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn pool_and_upsample() {
        let x = Tensor::from_data(1, 1, 2, 4, vec![1.0, 3.0, 0.0, -1.0, 2.0, 3.0, -2.0, -3.0]);
        let p = max_pool2(&x);
        assert_eq!(p.data, vec![3.0, 0.0]);
        let dx = max_pool2_backward(&x, &Tensor::from_data(1, 1, 1, 2, vec![1.0, 1.0]));
        // ties resolve to the first maximum in raster order
        assert_eq!(dx.data, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let u = upsample2(&p);
        assert_eq!(u.data, vec![3.0, 3.0, 0.0, 0.0, 3.0, 3.0, 0.0, 0.0]);
        assert_eq!(upsample2_backward(&u).data, vec![12.0, 0.0]);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = ramp(2, 1, 2, 2);
        let b = ramp(3, 1, 2, 2);
        let (a2, b2) = a.concat_channels(&b).split_channels(2);
        assert_eq!((a2, b2), (a, b));
    }
}
