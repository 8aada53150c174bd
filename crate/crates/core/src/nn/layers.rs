//! Differentiable layers on single-sample `(C, H, W)` tensors.
//!
//! Layers are stateless descriptions holding [`ParamId`]s; forward passes
//! return outputs and the caller keeps whatever activations the matching
//! backward pass needs. Backward passes accumulate into [`Grads`].

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Ix2, NdFloat};

use super::params::{Grads, ParamGroup, ParamId, ParamRole, ParamStore};

/// Output columns `lo..hi` whose tap `kx` lands inside a row of width `w`.
fn valid_span(kx: usize, stride: usize, pad: usize, w: usize, out_w: usize) -> (usize, usize) {
    let lo = if pad > kx { (pad - kx).div_ceil(stride) } else { 0 };
    let hi = if w + pad > kx { (w + pad - kx).div_ceil(stride).min(out_w) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds `k × k` patches into columns: `(C·k·k, out_h·out_w)`.
pub fn im2col<T: NdFloat>(
    x: ArrayView3<'_, T>,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
) -> Array2<T> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let plane = out_h * out_w;
    let mut cols = Array2::zeros((c * k * k, plane));
    let out = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let src = &xs[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * plane..(row + 1) * plane];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    let (lo, hi) = valid_span(kx, stride, pad, w, out_w);
                    if stride == 1 {
                        let first = lo + kx - pad;
                        dst_row[lo..hi].copy_from_slice(&src_row[first..first + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            dst_row[ox] = src_row[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto a `(c, h, w)` tensor.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: NdFloat>(
    cols: ArrayView2<'_, T>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
) -> Array3<T> {
    let plane = out_h * out_w;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = Array3::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let dst = &mut xs[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cs[row * plane..(row + 1) * plane];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * out_w..(oy + 1) * out_w];
                    let (lo, hi) = valid_span(kx, stride, pad, w, out_w);
                    if stride == 1 {
                        let first = lo + kx - pad;
                        for (d, &v) in dst_row[first..first + hi - lo].iter_mut().zip(&src_row[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            dst_row[ox * stride + kx - pad] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn flat<T: NdFloat>(x: ArrayView3<'_, T>) -> ArrayView2<'_, T> {
    let (c, h, w) = x.dim();
    x.into_shape_with_order((c, h * w)).expect("contiguous activation")
}

fn add_channel_bias<T: NdFloat>(y: &mut Array2<T>, bias: &ndarray::ArrayD<T>) {
    for (mut row, &b) in y.rows_mut().into_iter().zip(bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
}

fn accumulate_channel_sums<T: NdFloat>(dy: ArrayView2<'_, T>, db: &mut ndarray::ArrayD<T>) {
    for (row, b) in dy.rows().into_iter().zip(db.iter_mut()) {
        *b += row.sum();
    }
}

/// Stride-1 convolution with symmetric zero padding `k / 2` ("same" size).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
}

impl Conv2d {
    pub fn new<T: NdFloat>(
        ps: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        in_ch: usize,
        out_ch: usize,
        k: usize,
    ) -> Self {
        assert!(k % 2 == 1, "same padding needs an odd kernel");
        let weight = ps.add(
            format!("{name}.weight"),
            group,
            ParamRole::Weight { fan_in: in_ch * k * k },
            &[out_ch, in_ch, k, k],
        );
        let bias = ps.add(format!("{name}.bias"), group, ParamRole::Bias, &[out_ch]);
        Self { weight, bias, in_ch, out_ch, k }
    }

    fn weight_matrix<'a, T: NdFloat>(&self, ps: &'a ParamStore<T>) -> ArrayView2<'a, T> {
        ps.get(self.weight)
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * self.k * self.k))
            .expect("contiguous weight")
    }

    pub fn forward<T: NdFloat>(&self, ps: &ParamStore<T>, x: ArrayView3<'_, T>) -> Array3<T> {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "conv input channels");
        let wm = self.weight_matrix(ps);
        let mut y = Array2::zeros((self.out_ch, h * w));
        if self.k == 1 {
            let xs = x.as_standard_layout();
            general_mat_mul(T::one(), &wm, &flat(xs.view()), T::zero(), &mut y);
        } else {
            let cols = im2col(x, self.k, 1, self.k / 2, h, w);
            general_mat_mul(T::one(), &wm, &cols, T::zero(), &mut y);
        }
        add_channel_bias(&mut y, ps.get(self.bias));
        y.into_shape_with_order((self.out_ch, h, w)).expect("reshape")
    }

    /// Returns `dL/dx` when `need_dx`.
    pub fn backward<T: NdFloat>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView3<'_, T>,
        dy: ArrayView3<'_, T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Array3<T>> {
        let (c, h, w) = x.dim();
        let dys = dy.as_standard_layout();
        let dy2 = flat(dys.view());
        accumulate_channel_sums(dy2, grads.get_mut(self.bias));
        let wm = self.weight_matrix(ps);
        let xs = x.as_standard_layout();
        let cols = if self.k == 1 {
            None
        } else {
            Some(im2col(xs.view(), self.k, 1, self.k / 2, h, w))
        };
        let cols_view = match &cols {
            Some(c) => c.view(),
            None => flat(xs.view()),
        };
        {
            let gw = grads.get_mut(self.weight);
            let mut gw2 = gw
                .view_mut()
                .into_shape_with_order((self.out_ch, self.in_ch * self.k * self.k))
                .expect("contiguous grad");
            general_mat_mul(T::one(), &dy2, &cols_view.t(), T::one(), &mut gw2);
        }
        if !need_dx {
            return None;
        }
        let mut dcols = Array2::zeros((c * self.k * self.k, h * w));
        general_mat_mul(T::one(), &wm.t(), &dy2, T::zero(), &mut dcols);
        Some(if self.k == 1 {
            dcols.into_shape_with_order((c, h, w)).expect("reshape")
        } else {
            col2im(dcols.view(), c, h, w, self.k, 1, self.k / 2, h, w)
        })
    }
}

/// Transposed convolution (adjoint of a strided convolution), weights laid
/// out `(in, out, k, k)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_size: (usize, usize),
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: NdFloat>(
        ps: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_size: (usize, usize),
    ) -> Self {
        // average number of kernel taps landing on one output pixel
        let fan_in = (in_ch * k * k / (stride * stride)).max(1);
        let weight = ps.add(
            format!("{name}.weight"),
            group,
            ParamRole::Weight { fan_in },
            &[in_ch, out_ch, k, k],
        );
        let bias = ps.add(format!("{name}.bias"), group, ParamRole::Bias, &[out_ch]);
        Self { weight, bias, in_ch, out_ch, k, stride, pad, out_size }
    }

    /// Input size the adjoint convolution maps `out_size` onto.
    pub fn in_size(&self) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.pad - self.k) / self.stride + 1;
        (f(self.out_size.0), f(self.out_size.1))
    }

    fn weight_matrix<'a, T: NdFloat>(&self, ps: &'a ParamStore<T>) -> ArrayView2<'a, T> {
        ps.get(self.weight)
            .view()
            .into_shape_with_order((self.in_ch, self.out_ch * self.k * self.k))
            .expect("contiguous weight")
    }

    pub fn forward<T: NdFloat>(&self, ps: &ParamStore<T>, x: ArrayView3<'_, T>) -> Array3<T> {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "deconv input channels");
        assert_eq!((h, w), self.in_size(), "deconv input size");
        let wm = self.weight_matrix(ps);
        let xs = x.as_standard_layout();
        let mut cols = Array2::zeros((self.out_ch * self.k * self.k, h * w));
        general_mat_mul(T::one(), &wm.t(), &flat(xs.view()), T::zero(), &mut cols);
        let (oh, ow) = self.out_size;
        let mut y = col2im(cols.view(), self.out_ch, oh, ow, self.k, self.stride, self.pad, h, w);
        for (mut plane, &b) in y.outer_iter_mut().zip(ps.get(self.bias).iter()) {
            plane.mapv_inplace(|v| v + b);
        }
        y
    }

    pub fn backward<T: NdFloat>(
        &self,
        ps: &ParamStore<T>,
        x: ArrayView3<'_, T>,
        dy: ArrayView3<'_, T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Array3<T>> {
        let (c, h, w) = x.dim();
        let dys = dy.as_standard_layout();
        accumulate_channel_sums(flat(dys.view()), grads.get_mut(self.bias));
        let dcols = im2col(dys.view(), self.k, self.stride, self.pad, h, w);
        let xs = x.as_standard_layout();
        let x2 = flat(xs.view());
        {
            let gw = grads.get_mut(self.weight);
            let mut gw2 = gw
                .view_mut()
                .into_shape_with_order((self.in_ch, self.out_ch * self.k * self.k))
                .expect("contiguous grad");
            general_mat_mul(T::one(), &x2, &dcols.t(), T::one(), &mut gw2);
        }
        if !need_dx {
            return None;
        }
        let mut dx = Array2::zeros((c, h * w));
        general_mat_mul(T::one(), &self.weight_matrix(ps), &dcols, T::zero(), &mut dx);
        Some(dx.into_shape_with_order((c, h, w)).expect("reshape"))
    }
}

/// Fully connected layer `y = W x + b`, `W` shaped `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: NdFloat>(ps: &mut ParamStore<T>, name: &str, group: ParamGroup, in_dim: usize, out_dim: usize) -> Self {
        let weight = ps.add(
            format!("{name}.weight"),
            group,
            ParamRole::Weight { fan_in: in_dim },
            &[out_dim, in_dim],
        );
        let bias = ps.add(format!("{name}.bias"), group, ParamRole::Bias, &[out_dim]);
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn weight_matrix<'a, T: NdFloat>(&self, ps: &'a ParamStore<T>) -> ArrayView2<'a, T> {
        ps.get(self.weight).view().into_dimensionality::<Ix2>().expect("2-D weight")
    }

    pub fn forward<T: NdFloat>(&self, ps: &ParamStore<T>, x: &Array1<T>) -> Array1<T> {
        assert_eq!(x.len(), self.in_dim, "linear input length");
        let b = ps.get(self.bias).view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        self.weight_matrix(ps).dot(x) + b
    }

    pub fn backward<T: NdFloat>(
        &self,
        ps: &ParamStore<T>,
        x: &Array1<T>,
        dy: &Array1<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Array1<T>> {
        *grads.get_mut(self.bias) += &dy.view().into_dyn();
        {
            let gw = grads.get_mut(self.weight);
            let mut gw2 = gw.view_mut().into_dimensionality::<Ix2>().expect("2-D grad");
            let dy_col = dy.view().insert_axis(Axis(1));
            let x_row = x.view().insert_axis(Axis(0));
            general_mat_mul(T::one(), &dy_col, &x_row, T::one(), &mut gw2);
        }
        need_dx.then(|| self.weight_matrix(ps).t().dot(dy))
    }
}

/// Parametric rectifier with one learnable slope per channel.
#[derive(Clone, Debug)]
pub struct PRelu {
    pub slope: ParamId,
    pub channels: usize,
}

impl PRelu {
    pub fn new<T: NdFloat>(ps: &mut ParamStore<T>, name: &str, group: ParamGroup, channels: usize) -> Self {
        let slope = ps.add(format!("{name}.slope"), group, ParamRole::Slope, &[channels]);
        Self { slope, channels }
    }

    pub fn forward<T: NdFloat>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> Array3<T> {
        let mut y = x.clone();
        for (mut plane, &a) in y.outer_iter_mut().zip(ps.get(self.slope).iter()) {
            plane.mapv_inplace(|v| if v > T::zero() { v } else { a * v });
        }
        y
    }

    pub fn backward<T: NdFloat>(
        &self,
        ps: &ParamStore<T>,
        x: &Array3<T>,
        dy: &Array3<T>,
        grads: &mut Grads<T>,
    ) -> Array3<T> {
        let slopes = ps.get(self.slope);
        let mut dx = dy.clone();
        let gs = grads.get_mut(self.slope);
        for (c, (mut dplane, xplane)) in dx.outer_iter_mut().zip(x.outer_iter()).enumerate() {
            let a = slopes[[c]];
            let mut ds = T::zero();
            for (d, &xv) in dplane.iter_mut().zip(xplane.iter()) {
                if xv <= T::zero() {
                    ds += xv * *d;
                    *d = a * *d;
                }
            }
            gs[[c]] += ds;
        }
        dx
    }
}

pub fn relu<T: NdFloat>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward through a rectifier given its *output*.
pub fn relu_backward<T: NdFloat>(y: &Array3<T>, dy: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// 2×2 max pooling with stride 2; returns the flat argmax of each window
/// (first maximum wins on ties).
pub fn maxpool2<T: NdFloat>(x: &Array3<T>) -> (Array3<T>, Vec<u32>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array3::zeros((c, oh, ow));
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (x[[ci, 2 * oy, 2 * ox]], (2 * oy) * w + 2 * ox);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (yy, xx) = (2 * oy + dy, 2 * ox + dx);
                    let v = x[[ci, yy, xx]];
                    if v > best.0 {
                        best = (v, yy * w + xx);
                    }
                }
                y[[ci, oy, ox]] = best.0;
                arg.push((ci * h * w + best.1) as u32);
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<T: NdFloat>(dy: &Array3<T>, arg: &[u32], in_dim: (usize, usize, usize)) -> Array3<T> {
    let mut dx = Array3::zeros(in_dim);
    let flat = dx.as_slice_mut().expect("fresh array");
    for (&a, &g) in arg.iter().zip(dy.iter()) {
        flat[a as usize] += g;
    }
    dx
}

/// Source taps for ×2 bilinear upsampling with corner alignment.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    let m = 2 * n;
    (0..m)
        .map(|o| {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (n - 1) as f64 / (m - 1) as f64;
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// ×2 bilinear upsampling (corners aligned).
pub fn upsample2<T: NdFloat>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut y = Array3::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        let xp = x.index_axis(Axis(0), ci);
        let mut yp = y.index_axis_mut(Axis(0), ci);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from(fy).unwrap();
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from(fx).unwrap();
                let top = xp[[y0, x0]] * (T::one() - fx) + xp[[y0, x1]] * fx;
                let bot = xp[[y1, x0]] * (T::one() - fx) + xp[[y1, x1]] * fx;
                yp[[oy, ox]] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    y
}

pub fn upsample2_backward<T: NdFloat>(dy: &Array3<T>) -> Array3<T> {
    let (c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut dx = Array3::zeros((c, h, w));
    for ci in 0..c {
        let gp = dy.index_axis(Axis(0), ci);
        let mut dp = dx.index_axis_mut(Axis(0), ci);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from(fy).unwrap();
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from(fx).unwrap();
                let g = gp[[oy, ox]];
                dp[[y0, x0]] += g * (T::one() - fy) * (T::one() - fx);
                dp[[y0, x1]] += g * (T::one() - fy) * fx;
                dp[[y1, x0]] += g * fy * (T::one() - fx);
                dp[[y1, x1]] += g * fy * fx;
            }
        }
    }
    dx
}

/// Channel-wise concatenation.
pub fn concat<T: NdFloat>(parts: &[&Array3<T>]) -> Array3<T> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("matching spatial dims")
}

/// Splits a concatenated gradient back into per-part slices.
pub fn split_channels<T: NdFloat>(d: &Array3<T>, sizes: &[usize]) -> Vec<Array3<T>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let part = d.slice(s![start..start + n, .., ..]).to_owned();
            start += n;
            part
        })
        .collect()
}
