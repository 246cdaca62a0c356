//! Raw compute kernels over slices: GEMM, im2col/col2im, convolutions,
//! normalization and pooling. The graph layer owns shape checking.

/// Geometry of a 2-D sliding window over a `channels × height × width` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn for_input(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let ph = height + 2 * pad;
        let pw = width + 2 * pad;
        if stride == 0 || ph < kh || pw < kw {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c = op(a) · op(b) + beta · c` with `op(a)` of size `m × k` and `op(b)` of size `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above guarantees every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn im2col(img: &[f64], g: &Window, col: &mut [f64]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds columns back into `img` (the adjoint of [`im2col`]).
pub(crate) fn col2im(col: &[f64], g: &Window, img: &mut [f64]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation. `x`: `[n, g.channels, g.height, g.width]`, `w`: `[cout, g.channels, kh, kw]`.
pub(crate) fn conv2d_forward(
    x: &[f64],
    n: usize,
    w: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    g: &Window,
) -> Vec<f64> {
    let in_plane = g.channels * g.height * g.width;
    let out_plane = cout * g.cols();
    let mut out = vec![0.0; n * out_plane];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.rows() * g.cols()]
    };
    for b in 0..n {
        let xb = &x[b * in_plane..(b + 1) * in_plane];
        let ob = &mut out[b * out_plane..(b + 1) * out_plane];
        let cols: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        gemm(cout, g.rows(), g.cols(), w, false, cols, false, ob, 0.0);
        if let Some(bias) = bias {
            add_channel_bias(ob, bias, g.cols());
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    n: usize,
    w: &[f64],
    cout: usize,
    g: &Window,
    dout: &[f64],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let in_plane = g.channels * g.height * g.width;
    let out_plane = cout * g.cols();
    let mut dx = need_dx.then(|| vec![0.0; n * in_plane]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let db = need_db.then(|| channel_sums(dout, n, cout, g.cols()));
    let mut col = vec![0.0; g.rows() * g.cols()];
    for b in 0..n {
        let db_ = &dout[b * out_plane..(b + 1) * out_plane];
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_plane..(b + 1) * in_plane];
            let cols: &[f64] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            gemm(cout, g.cols(), g.rows(), db_, false, cols, true, dw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_plane..(b + 1) * in_plane];
            if g.is_pointwise() {
                gemm(g.rows(), cout, g.cols(), w, true, db_, false, dxb, 0.0);
            } else {
                gemm(g.rows(), cout, g.cols(), w, true, db_, false, &mut col, 0.0);
                col2im(&col, g, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Transposed convolution. `x`: `[n, cin, g.out_h, g.out_w]`, `w`: `[cin, g.channels, kh, kw]`;
/// the output image is `[n, g.channels, g.height, g.width]`.
pub(crate) fn conv_transpose2d_forward(
    x: &[f64],
    n: usize,
    w: &[f64],
    bias: Option<&[f64]>,
    cin: usize,
    g: &Window,
) -> Vec<f64> {
    let in_plane = cin * g.cols();
    let out_plane = g.channels * g.height * g.width;
    let mut out = vec![0.0; n * out_plane];
    let mut col = vec![0.0; g.rows() * g.cols()];
    for b in 0..n {
        let xb = &x[b * in_plane..(b + 1) * in_plane];
        let ob = &mut out[b * out_plane..(b + 1) * out_plane];
        gemm(g.rows(), cin, g.cols(), w, true, xb, false, &mut col, 0.0);
        col2im(&col, g, ob);
        if let Some(bias) = bias {
            add_channel_bias(ob, bias, g.height * g.width);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward(
    x: &[f64],
    n: usize,
    w: &[f64],
    cin: usize,
    g: &Window,
    dout: &[f64],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let in_plane = cin * g.cols();
    let out_plane = g.channels * g.height * g.width;
    let mut dx = need_dx.then(|| vec![0.0; n * in_plane]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let db = need_db.then(|| channel_sums(dout, n, g.channels, g.height * g.width));
    if need_dx || need_dw {
        let mut col = vec![0.0; g.rows() * g.cols()];
        for b in 0..n {
            im2col(&dout[b * out_plane..(b + 1) * out_plane], g, &mut col);
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * in_plane..(b + 1) * in_plane];
                gemm(cin, g.rows(), g.cols(), w, false, &col, false, dxb, 0.0);
            }
            if let Some(dw) = dw.as_mut() {
                let xb = &x[b * in_plane..(b + 1) * in_plane];
                gemm(cin, g.cols(), g.rows(), xb, false, &col, true, dw, 1.0);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (c, &bv) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += bv;
        }
    }
}

fn channel_sums(d: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut s = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in s.iter_mut().enumerate() {
            let off = (b * c + ch) * plane;
            *acc += d[off..off + plane].iter().sum::<f64>();
        }
    }
    s
}

/// Saved statistics of an instance-norm forward pass.
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn instance_norm_forward(
    x: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, NormCache) {
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let src = &x[off..off + plane];
            let mean = src.iter().sum::<f64>() / plane as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[b * c + ch] = is;
            for i in 0..plane {
                let h = (src[i] - mean) * is;
                xhat[off + i] = h;
                out[off + i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (out, NormCache { xhat, inv_std })
}

pub(crate) fn instance_norm_backward(
    cache: &NormCache,
    dout: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; dout.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let p = plane as f64;
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let dy = &dout[off..off + plane];
            let xh = &cache.xhat[off..off + plane];
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for i in 0..plane {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * xh[i];
            }
            dgamma[ch] += sum_dy_xh;
            dbeta[ch] += sum_dy;
            let k = gamma[ch] * cache.inv_std[b * c + ch];
            let mean_dy = sum_dy / p;
            let mean_dy_xh = sum_dy_xh / p;
            for i in 0..plane {
                dx[off + i] = k * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
            }
        }
    }
    (dx, dgamma, dbeta)
}
