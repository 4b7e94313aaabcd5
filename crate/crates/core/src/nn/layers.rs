use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;

use super::Param;

fn fan_in_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    // He-style uniform: variance 2 / fan_in, suited to the ReLU stacks
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut arr = ArrayD::zeros(IxDyn(shape));
    for v in arr.iter_mut() {
        *v = rng.gen_range(-limit..limit);
    }
    arr
}

fn small_uniform(rng: &mut impl Rng, shape: &[usize]) -> ArrayD<f64> {
    let mut arr = ArrayD::zeros(IxDyn(shape));
    for v in arr.iter_mut() {
        *v = rng.gen_range(-0.05..0.05);
    }
    arr
}

/// 2-D convolution over `[N, C, H, W]` frames, square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param, // [out, in, k, k]
    pub b: Param, // [out]
    pub kernel: usize,
    pub pad: usize,
    pub stride: usize,
    cache_dims: Option<(usize, usize, usize, usize)>,
    cache_col: Option<Array2<f64>>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = fan_in_uniform(rng, &[out_ch, in_ch, kernel, kernel], fan_in);
        let b = small_uniform(rng, &[out_ch]);
        Conv2d {
            w: Param::new(format!("{name}.w"), w),
            b: Param::new(format!("{name}.b"), b),
            kernel,
            pad,
            stride,
            cache_dims: None,
            cache_col: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    /// Lower input patches into a `[(N*Ho*Wo), C*k*k]` matrix.
    ///
    /// The innermost kernel row is contiguous in both the source image and the
    /// destination column matrix, so it is copied as a slice; out-of-bounds
    /// (padding) portions are clipped off the run and stay zero.
    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        let k = self.kernel;
        let (ho, wo) = self.out_hw(h, w);
        let ck2 = c * k * k;
        let mut col = Array2::<f64>::zeros((n * ho * wo, ck2));
        let xs = x.as_slice().expect("contiguous input");
        let cols = col.as_slice_mut().expect("contiguous col");
        for ni in 0..n {
            for oy in 0..ho {
                let iy0 = (oy * self.stride) as isize - self.pad as isize;
                for ox in 0..wo {
                    let row = (ni * ho + oy) * wo + ox;
                    let ix0 = (ox * self.stride) as isize - self.pad as isize;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = (w as isize - ix0).clamp(0, k as isize) as usize;
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let run = kx_hi - kx_lo;
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = ((ni * c + ci) * h + iy as usize) * w
                                + (ix0 + kx_lo as isize) as usize;
                            let dst = row * ck2 + (ci * k + ky) * k + kx_lo;
                            cols[dst..dst + run].copy_from_slice(&xs[src..src + run]);
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, gcol: &Array2<f64>, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        let (n, c, h, w) = dims;
        let k = self.kernel;
        let (ho, wo) = self.out_hw(h, w);
        let ck2 = c * k * k;
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        {
            let gxs = gx.as_slice_mut().expect("contiguous grad");
            let gcols = gcol.as_slice().expect("contiguous gcol");
            for ni in 0..n {
                for oy in 0..ho {
                    let iy0 = (oy * self.stride) as isize - self.pad as isize;
                    for ox in 0..wo {
                        let row = (ni * ho + oy) * wo + ox;
                        let ix0 = (ox * self.stride) as isize - self.pad as isize;
                        let kx_lo = (-ix0).max(0) as usize;
                        let kx_hi = (w as isize - ix0).clamp(0, k as isize) as usize;
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let run = kx_hi - kx_lo;
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = iy0 + ky as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dst = ((ni * c + ci) * h + iy as usize) * w
                                    + (ix0 + kx_lo as isize) as usize;
                                let src = row * ck2 + (ci * k + ky) * k + kx_lo;
                                for j in 0..run {
                                    gxs[dst + j] += gcols[src + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let out_ch = self.w.value.shape()[0];
        let col = self.im2col(x);
        let wmat = self
            .w
            .value
            .view()
            .into_shape((out_ch, col.ncols()))
            .expect("weight reshape");
        let mut y = col.dot(&wmat.t()); // [(n*ho*wo), out]
        let bvec = self.b.value.view().into_shape(out_ch).unwrap();
        for mut row in y.rows_mut() {
            row += &bvec;
        }
        self.cache_dims = Some((n, c, h, w));
        self.cache_col = Some(col);
        // [(n*ho*wo), out] -> [n, out, ho, wo]
        y.into_shape((n, ho, wo, out_ch))
            .unwrap()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned()
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let dims = self.cache_dims.take().expect("backward before forward");
        let col = self.cache_col.take().expect("backward before forward");
        let (n, _, h, w) = dims;
        let (ho, wo) = self.out_hw(h, w);
        let out_ch = self.w.value.shape()[0];

        // [n, out, ho, wo] -> [(n*ho*wo), out]
        let gy_mat = gy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_shape((n * ho * wo, out_ch))
            .unwrap()
            .to_owned();

        let gw = gy_mat.t().dot(&col); // [out, c*k*k]
        self.w.grad += &gw.into_shape(self.w.value.raw_dim()).unwrap();
        let gb = gy_mat.sum_axis(Axis(0));
        self.b.grad += &gb.into_shape(self.b.grad.raw_dim()).unwrap();

        let wmat = self
            .w
            .value
            .view()
            .into_shape((out_ch, col.ncols()))
            .unwrap();
        let gcol = gy_mat.dot(&wmat);
        self.col2im(&gcol, dims)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache_mask: Option<Array4<f64>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let y = x.mapv(|v| if v > 0.0 { v } else { 0.0 });
        self.cache_mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let mask = self.cache_mask.take().expect("backward before forward");
        gy * &mask
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh {
    cache_y: Option<Array4<f64>>,
}

impl Tanh {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let y = x.mapv(f64::tanh);
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let y = self.cache_y.take().expect("backward before forward");
        gy * &y.mapv(|v| 1.0 - v * v)
    }
}

/// Non-overlapping average pooling; trailing rows/columns that do not fill a
/// window are dropped (floor semantics).
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub k: usize,
    cache_dims: Option<(usize, usize, usize, usize)>,
}

impl AvgPool2d {
    pub fn new(k: usize) -> Self {
        AvgPool2d {
            k,
            cache_dims: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let k = self.k;
        let (ho, wo) = (h / k, w / k);
        let mut y = Array4::<f64>::zeros((n, c, ho, wo));
        let inv = 1.0 / (k * k) as f64;
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += x[[ni, ci, oy * k + ky, ox * k + kx]];
                            }
                        }
                        y[[ni, ci, oy, ox]] = acc * inv;
                    }
                }
            }
        }
        self.cache_dims = Some((n, c, h, w));
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = self.cache_dims.take().expect("backward before forward");
        let k = self.k;
        let (ho, wo) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gy[[ni, ci, oy, ox]] * inv;
                        for ky in 0..k {
                            for kx in 0..k {
                                gx[[ni, ci, oy * k + ky, ox * k + kx]] = g;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Spatial global average pooling `[N, C, H, W] -> [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache_dims: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        self.cache_dims = Some((n, c, h, w));
        let inv = 1.0 / (h * w) as f64;
        let mut y = Array2::<f64>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let mut acc = 0.0;
                for yy in 0..h {
                    for xx in 0..w {
                        acc += x[[ni, ci, yy, xx]];
                    }
                }
                y[[ni, ci]] = acc * inv;
            }
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array4<f64> {
        let (n, c, h, w) = self.cache_dims.take().expect("backward before forward");
        let inv = 1.0 / (h * w) as f64;
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = gy[[ni, ci]] * inv;
                gx.slice_mut(ndarray::s![ni, ci, .., ..]).fill(g);
            }
        }
        gx
    }
}

/// Fully connected layer `[N, F] -> [N, O]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param, // [out, in]
    pub b: Param, // [out]
    cache_x: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(name: &str, in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        let w = fan_in_uniform(rng, &[out_f, in_f], in_f);
        let b = small_uniform(rng, &[out_f]);
        Linear {
            w: Param::new(format!("{name}.w"), w),
            b: Param::new(format!("{name}.b"), b),
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let wmat = self
            .w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let bvec = self
            .b
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let mut y = x.dot(&wmat.t());
        for mut row in y.rows_mut() {
            row += &bvec;
        }
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.take().expect("backward before forward");
        let gw = gy.t().dot(&x);
        self.w.grad += &gw.into_dyn();
        let gb: Array1<f64> = gy.sum_axis(Axis(0));
        self.b.grad += &gb.into_dyn();
        let wmat = self
            .w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        gy.dot(&wmat)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
}

/// Conv-stage layer variants, so a template can be described as a flat list.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Relu(Relu),
    Tanh(Tanh),
    Pool(AvgPool2d),
}

impl Layer {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Tanh(l) => l.forward(x),
            Layer::Pool(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        match self {
            Layer::Conv(l) => l.backward(gy),
            Layer::Relu(l) => l.backward(gy),
            Layer::Tanh(l) => l.backward(gy),
            Layer::Pool(l) => l.backward(gy),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.w, &mut l.b],
            _ => vec![],
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.w, &l.b],
            _ => vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn finite_diff_input<F>(f: &mut F, x: &Array4<f64>, idx: (usize, usize, usize, usize)) -> f64
    where
        F: FnMut(&Array4<f64>) -> f64,
    {
        let h = 1e-5;
        let mut xp = x.clone();
        xp[idx] += h;
        let mut xm = x.clone();
        xm[idx] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    #[test]
    fn conv_input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new("c", 2, 3, 3, 1, 1, &mut rng);
        let mut x = Array4::<f64>::zeros((1, 2, 5, 5));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        // scalar loss: sum of squares of output
        let y = conv.forward(&x);
        let gy = y.mapv(|v| 2.0 * v);
        let gx = conv.backward(&gy);

        let mut loss = |xin: &Array4<f64>| {
            let mut c2 = conv.clone();
            let y = c2.forward(xin);
            y.iter().map(|v| v * v).sum::<f64>()
        };
        for &idx in &[(0, 0, 0, 0), (0, 1, 2, 3), (0, 0, 4, 4), (0, 1, 1, 1)] {
            let fd = finite_diff_input(&mut loss, &x, idx);
            assert!(
                (gx[idx] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "analytic {} vs fd {}",
                gx[idx],
                fd
            );
        }
    }

    #[test]
    fn conv_weight_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new("c", 2, 2, 3, 1, 1, &mut rng);
        let mut x = Array4::<f64>::zeros((2, 2, 4, 4));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let y = conv.forward(&x);
        let gy = y.mapv(|v| 2.0 * v);
        conv.backward(&gy);

        let h = 1e-5;
        for flat in [0usize, 7, 15, 20] {
            let mut cp = conv.clone();
            cp.w.value.as_slice_mut().unwrap()[flat] += h;
            let yp: f64 = cp.forward(&x).iter().map(|v| v * v).sum();
            let mut cm = conv.clone();
            cm.w.value.as_slice_mut().unwrap()[flat] -= h;
            let ym: f64 = cm.forward(&x).iter().map(|v| v * v).sum();
            let fd = (yp - ym) / (2.0 * h);
            let g = conv.w.grad.as_slice().unwrap()[flat];
            assert!(
                (g - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn avgpool_roundtrip_shapes() {
        let mut pool = AvgPool2d::new(2);
        let x = Array4::<f64>::from_elem((1, 1, 4, 4), 3.0);
        let y = pool.forward(&x);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert!((y[[0, 0, 0, 0]] - 3.0).abs() < 1e-12);
        let gx = pool.backward(&y);
        assert_eq!(gx.dim(), (1, 1, 4, 4));
        assert!((gx[[0, 0, 0, 0]] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn linear_gradients_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::new("l", 4, 3, &mut rng);
        let mut x = Array2::<f64>::zeros((2, 4));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let y = lin.forward(&x);
        let gy = y.mapv(|v| 2.0 * v);
        let gx = lin.backward(&gy);

        let h = 1e-5;
        for flat in [0usize, 5, 11] {
            let mut lp = lin.clone();
            lp.w.value.as_slice_mut().unwrap()[flat] += h;
            let yp: f64 = lp.forward(&x).iter().map(|v| v * v).sum();
            let mut lm = lin.clone();
            lm.w.value.as_slice_mut().unwrap()[flat] -= h;
            let ym: f64 = lm.forward(&x).iter().map(|v| v * v).sum();
            let fd = (yp - ym) / (2.0 * h);
            let g = lin.w.grad.as_slice().unwrap()[flat];
            assert!((g - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
        let fd = {
            let h = 1e-5;
            let mut xp = x.clone();
            xp[[0, 1]] += h;
            let mut xm = x.clone();
            xm[[0, 1]] -= h;
            let yp: f64 = lin.clone().forward(&xp).iter().map(|v| v * v).sum();
            let ym: f64 = lin.clone().forward(&xm).iter().map(|v| v * v).sum();
            (yp - ym) / (2.0 * h)
        };
        assert!((gx[[0, 1]] - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
    }
}
