//! Tensor primitives for the U-Net and their reverse-mode counterparts.
//!
//! Feature maps are `(channels, height, width)` arrays. Convolution weights
//! are row-major `(c_out, c_in · k · k)` matrices so a layer is one GEMM
//! against an im2col buffer.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};

pub type Tensor = Array3<f64>;

pub const LEAKY_SLOPE: f64 = 0.125;

/// `(c · 9, h · w)` patch matrix for a zero-padded 3×3 convolution.
pub fn im2col3(x: &Tensor) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * 9, h * w));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let plane = &xs[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cs[((ch * 9 + ky * 3 + kx) * h * w)..((ch * 9 + ky * 3 + kx + 1) * h * w)];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Transpose of [`im2col3`]: scatters patch gradients back onto the image.
pub fn col2im3(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros((c, h, w));
    let cs = cols.as_standard_layout();
    let cs = cs.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let plane = &mut os[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cs[((ch * 9 + ky * 3 + kx) * h * w)..((ch * 9 + ky * 3 + kx + 1) * h * w)];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

fn flat(x: &Tensor) -> ArrayView2<'_, f64> {
    let (c, h, w) = x.dim();
    x.view().into_shape_with_order((c, h * w)).expect("standard layout")
}

fn unflat(m: Array2<f64>, h: usize, w: usize) -> Tensor {
    let c = m.nrows();
    m.into_shape_with_order((c, h, w)).expect("standard layout")
}

fn add_bias(y: &mut Tensor, bias: Option<ArrayView1<f64>>) {
    if let Some(b) = bias {
        for (mut plane, &bv) in y.outer_iter_mut().zip(b.iter()) {
            plane += bv;
        }
    }
}

fn bias_grad(dy: &Tensor) -> Array1<f64> {
    dy.outer_iter().map(|p| p.sum()).collect()
}

/// Zero-padded 3×3 convolution, `w` of shape `(c_out, c_in · 9)`.
pub fn conv3x3(x: &Tensor, w: ArrayView2<f64>, bias: Option<ArrayView1<f64>>) -> Tensor {
    let (_, h, wd) = x.dim();
    let mut y = unflat(w.dot(&im2col3(x)), h, wd);
    add_bias(&mut y, bias);
    y
}

/// Returns `(dx, dw, dbias)`.
pub fn conv3x3_back(x: &Tensor, w: ArrayView2<f64>, dy: &Tensor) -> (Tensor, Array2<f64>, Array1<f64>) {
    let (c, h, wd) = x.dim();
    let dyf = flat(dy);
    let dw = dyf.dot(&im2col3(x).t());
    let dx = col2im3(&w.t().dot(&dyf), c, h, wd);
    (dx, dw, bias_grad(dy))
}

/// 1×1 convolution, `w` of shape `(c_out, c_in)`.
pub fn conv1x1(x: &Tensor, w: ArrayView2<f64>, bias: Option<ArrayView1<f64>>) -> Tensor {
    let (_, h, wd) = x.dim();
    let mut y = unflat(w.dot(&flat(x)), h, wd);
    add_bias(&mut y, bias);
    y
}

pub fn conv1x1_back(x: &Tensor, w: ArrayView2<f64>, dy: &Tensor) -> (Tensor, Array2<f64>, Array1<f64>) {
    let (_, h, wd) = x.dim();
    let dyf = flat(dy);
    let dw = dyf.dot(&flat(x).t());
    let dx = unflat(w.t().dot(&dyf), h, wd);
    (dx, dw, bias_grad(dy))
}

/// 2×2 stride-2 transposed convolution. Row `o · 4 + a · 2 + b` of `w`
/// holds the weights from every input channel to output `(o, 2i + a, 2j + b)`.
pub fn upconv2(x: &Tensor, w: ArrayView2<f64>, bias: ArrayView1<f64>) -> Tensor {
    let (_, h, wd) = x.dim();
    let cout = w.nrows() / 4;
    let m = w.dot(&flat(x));
    let mut y = Tensor::zeros((cout, 2 * h, 2 * wd));
    for o in 0..cout {
        for a in 0..2 {
            for b in 0..2 {
                let row = m.row(o * 4 + a * 2 + b);
                let row = row.into_shape_with_order((h, wd)).expect("contiguous row");
                y.slice_mut(s![o, a..;2, b..;2]).assign(&row);
            }
        }
        let bv = bias[o];
        y.index_axis_mut(Axis(0), o).mapv_inplace(|v| v + bv);
    }
    y
}

pub fn upconv2_back(x: &Tensor, w: ArrayView2<f64>, dy: &Tensor) -> (Tensor, Array2<f64>, Array1<f64>) {
    let (_, h, wd) = x.dim();
    let cout = w.nrows() / 4;
    let mut g = Array2::zeros((cout * 4, h * wd));
    for o in 0..cout {
        for a in 0..2 {
            for b in 0..2 {
                let mut row = g.row_mut(o * 4 + a * 2 + b);
                let src = dy.slice(s![o, a..;2, b..;2]);
                row.iter_mut().zip(src.iter()).for_each(|(d, s)| *d = *s);
            }
        }
    }
    let dw = g.dot(&flat(x).t());
    let dx = unflat(w.t().dot(&g), h, wd);
    (dx, dw, bias_grad(dy))
}

/// Cached statistics of a per-channel normalisation.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Tensor,
    pub inv_std: Array1<f64>,
}

/// Per-channel normalisation with the sample's own spatial statistics.
pub fn norm_forward(x: &Tensor, scale: ArrayView1<f64>, shift: ArrayView1<f64>, eps: f64) -> (Tensor, NormCache) {
    let (c, _, _) = x.dim();
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(c);
    let mut y = Tensor::zeros(x.dim());
    for ch in 0..c {
        let mut p = xhat.index_axis_mut(Axis(0), ch);
        let n = p.len() as f64;
        let mean = p.sum() / n;
        p.mapv_inplace(|v| v - mean);
        let var = p.iter().map(|v| v * v).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        p.mapv_inplace(|v| v * is);
        inv_std[ch] = is;
        let (g, b) = (scale[ch], shift[ch]);
        Zip::from(y.index_axis_mut(Axis(0), ch))
            .and(&p)
            .for_each(|o, &v| *o = g * v + b);
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(dx, dscale, dshift)`.
pub fn norm_back(cache: &NormCache, scale: ArrayView1<f64>, dy: &Tensor) -> (Tensor, Array1<f64>, Array1<f64>) {
    let c = dy.dim().0;
    let mut dx = Tensor::zeros(dy.dim());
    let mut dscale = Array1::zeros(c);
    let mut dshift = Array1::zeros(c);
    for ch in 0..c {
        let dyc = dy.index_axis(Axis(0), ch);
        let xh = cache.xhat.index_axis(Axis(0), ch);
        let n = dyc.len() as f64;
        let sum_dy = dyc.sum();
        let sum_dy_xh = Zip::from(&dyc).and(&xh).fold(0.0, |a, &d, &x| a + d * x);
        dscale[ch] = sum_dy_xh;
        dshift[ch] = sum_dy;
        let k = scale[ch] * cache.inv_std[ch] / n;
        Zip::from(dx.index_axis_mut(Axis(0), ch))
            .and(&dyc)
            .and(&xh)
            .for_each(|o, &d, &x| *o = k * (n * d - sum_dy - x * sum_dy_xh));
    }
    (dx, dscale, dshift)
}

pub fn relu_inplace(x: &mut Tensor) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Masks `dy` where the activation output `y` is not positive.
pub fn relu_back_inplace(y: &Tensor, dy: &mut Tensor) {
    Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
}

pub fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// 2×2 max pooling; also returns the winning offset (0..4) per output cell.
pub fn maxpool2(x: &Tensor) -> (Tensor, Array3<u8>) {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros((c, ho, wo));
    let mut arg = Array3::zeros((c, ho, wo));
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut best = x[[ch, 2 * i, 2 * j]];
                let mut k = 0u8;
                for (n, (a, b)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = x[[ch, 2 * i + a, 2 * j + b]];
                    if v > best {
                        best = v;
                        k = n as u8 + 1;
                    }
                }
                y[[ch, i, j]] = best;
                arg[[ch, i, j]] = k;
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_back(arg: &Array3<u8>, dy: &Tensor) -> Tensor {
    let (c, ho, wo) = dy.dim();
    let mut dx = Tensor::zeros((c, 2 * ho, 2 * wo));
    for ((ch, i, j), &k) in arg.indexed_iter() {
        let (a, b) = ((k / 2) as usize, (k % 2) as usize);
        dx[[ch, 2 * i + a, 2 * j + b]] += dy[[ch, i, j]];
    }
    dx
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}
