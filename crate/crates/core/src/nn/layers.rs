//! Batched NCHW layer kernels with hand-written backward passes.
//!
//! Convolutions lower each sample to an im2col matrix and multiply with
//! `matrixmultiply::dgemm`. Every sample is processed independently and
//! reductions run in a fixed order, so results are bitwise reproducible.

/// Dense `n × c × h × w` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: slice lengths cover every strided access for the shapes used here.
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch_len()
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }
}

fn im2col(g: &ConvGeom, x: &[f64], h: usize, w: usize, cols: &mut [f64]) {
    let (oh, ow) = g.out_size(h, w);
    let p = oh * ow;
    let k = g.kernel;
    for ci in 0..g.cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], h: usize, w: usize, dx: &mut [f64]) {
    let (oh, ow) = g.out_size(h, w);
    let p = oh * ow;
    let k = g.kernel;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Bias-free convolution; `weight` is `cout × cin × k × k`.
pub fn conv_forward(g: &ConvGeom, weight: &[f64], x: &Tensor) -> Tensor {
    debug_assert_eq!(x.c, g.cin);
    let (oh, ow) = g.out_size(x.h, x.w);
    let p = oh * ow;
    let kl = g.patch_len();
    let mut out = Tensor::zeros(x.n, g.cout, oh, ow);
    let mut cols = vec![0.0; kl * p];
    for i in 0..x.n {
        im2col(g, x.sample(i), x.h, x.w, &mut cols);
        let dst = &mut out.data[i * g.cout * p..(i + 1) * g.cout * p];
        gemm(
            g.cout,
            kl,
            p,
            weight,
            (kl as isize, 1),
            &cols,
            (p as isize, 1),
            0.0,
            dst,
        );
    }
    out
}

/// Accumulates the weight gradient into `dweight` and, when `want_dx`,
/// returns the input gradient.
pub fn conv_backward(
    g: &ConvGeom,
    weight: &[f64],
    x: &Tensor,
    dy: &Tensor,
    dweight: &mut [f64],
    want_dx: bool,
) -> Option<Tensor> {
    let p = dy.plane();
    let kl = g.patch_len();
    let mut cols = vec![0.0; kl * p];
    let mut dcols = if want_dx { vec![0.0; kl * p] } else { Vec::new() };
    let mut dx = want_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
    for i in 0..x.n {
        let dyi = dy.sample(i);
        im2col(g, x.sample(i), x.h, x.w, &mut cols);
        // dW += dY (cout×P) · colsᵀ (P×K)
        gemm(
            g.cout,
            p,
            kl,
            dyi,
            (p as isize, 1),
            &cols,
            (1, p as isize),
            1.0,
            dweight,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ (K×cout) · dY (cout×P)
            gemm(
                kl,
                g.cout,
                p,
                weight,
                (1, kl as isize),
                dyi,
                (p as isize, 1),
                0.0,
                &mut dcols,
            );
            let len = x.sample_len();
            col2im(g, &dcols, x.h, x.w, &mut dx.data[i * len..(i + 1) * len]);
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Batch statistics of one channel, summed in (sample, position) order.
fn channel_stats(x: &Tensor, ch: usize) -> (f64, f64) {
    let hw = x.plane();
    let count = (x.n * hw) as f64;
    let mut sum = 0.0;
    for i in 0..x.n {
        sum += x.data[(i * x.c + ch) * hw..][..hw].iter().sum::<f64>();
    }
    let mean = sum / count;
    let mut sq = 0.0;
    for i in 0..x.n {
        sq += x.data[(i * x.c + ch) * hw..][..hw]
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>();
    }
    (mean, sq / count)
}

/// Training-mode batch norm. When `running` is given as `(mean, var)`, the
/// running statistics are updated with the unbiased batch variance.
pub fn bn_forward_train(
    gamma: &[f64],
    beta: &[f64],
    x: &Tensor,
    running: Option<(&mut [f64], &mut [f64])>,
) -> (Tensor, BnCache) {
    let hw = x.plane();
    let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut inv_std = vec![0.0; x.c];
    let mut stats = Vec::with_capacity(x.c);
    for ch in 0..x.c {
        let (mean, var) = channel_stats(x, ch);
        stats.push((mean, var));
        let inv = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = inv;
        for i in 0..x.n {
            let off = (i * x.c + ch) * hw;
            for j in off..off + hw {
                let xh = (x.data[j] - mean) * inv;
                xhat.data[j] = xh;
                y.data[j] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    if let Some((rm, rv)) = running {
        let count = (x.n * hw) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for (ch, (mean, var)) in stats.into_iter().enumerate() {
            rm[ch] = (1.0 - BN_MOMENTUM) * rm[ch] + BN_MOMENTUM * mean;
            rv[ch] = (1.0 - BN_MOMENTUM) * rv[ch] + BN_MOMENTUM * var * unbias;
        }
    }
    (y, BnCache { xhat, inv_std })
}

pub fn bn_forward_eval(gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], x: &Tensor) -> Tensor {
    let hw = x.plane();
    let mut y = x.clone();
    for i in 0..x.n {
        for ch in 0..x.c {
            let scale = gamma[ch] / (var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            for v in &mut y.data[(i * x.c + ch) * hw..][..hw] {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

pub fn bn_backward(
    gamma: &[f64],
    cache: &BnCache,
    dy: &Tensor,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor {
    let hw = dy.plane();
    let count = (dy.n * hw) as f64;
    let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
    for ch in 0..dy.c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for i in 0..dy.n {
            let off = (i * dy.c + ch) * hw;
            for j in off..off + hw {
                sum_dy += dy.data[j];
                sum_dy_xhat += dy.data[j] * cache.xhat.data[j];
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / count;
        for i in 0..dy.n {
            let off = (i * dy.c + ch) * hw;
            for j in off..off + hw {
                dx.data[j] = k * (count * dy.data[j] - sum_dy - cache.xhat.data[j] * sum_dy_xhat);
            }
        }
    }
    dx
}

pub fn relu_inplace(x: &mut Tensor) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` wherever the ReLU output `y` was not positive.
pub fn relu_backward_inplace(y: &Tensor, dy: &mut Tensor) {
    for (d, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 3×3, stride 2, padding 1 max pool. Returns the output and, per output
/// element, the flat input index it came from.
pub fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (oh, ow) = ((x.h + 2 - 3) / 2 + 1, (x.w + 2 - 3) / 2 + 1);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0usize; out.data.len()];
    let mut o = 0;
    for plane in 0..x.n * x.c {
        let base = plane * x.h * x.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..3 {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * x.w + ix as usize;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.data[o] = best;
                arg[o] = best_idx;
                o += 1;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(input_shape: &Tensor, arg: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape.n, input_shape.c, input_shape.h, input_shape.w);
    for (&idx, &g) in arg.iter().zip(&dy.data) {
        dx.data[idx] += g;
    }
    dx
}

/// Global average pool to `n × c` features.
pub fn gap_forward(x: &Tensor) -> Vec<f64> {
    let hw = x.plane();
    x.data
        .chunks_exact(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect()
}

pub fn gap_backward(shape: &Tensor, dfeat: &[f64]) -> Tensor {
    let hw = shape.plane();
    let mut dx = Tensor::zeros(shape.n, shape.c, shape.h, shape.w);
    for (chunk, &g) in dx.data.chunks_exact_mut(hw).zip(dfeat) {
        chunk.fill(g / hw as f64);
    }
    dx
}

/// Logits `n × out` from features `n × inp`; `weight` is `out × inp`.
pub fn linear_forward(weight: &[f64], bias: &[f64], feats: &[f64], n: usize, inp: usize) -> Vec<f64> {
    let out = bias.len();
    let mut logits = Vec::with_capacity(n * out);
    for i in 0..n {
        let f = &feats[i * inp..(i + 1) * inp];
        for o in 0..out {
            let row = &weight[o * inp..(o + 1) * inp];
            logits.push(bias[o] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    logits
}

pub fn linear_backward(
    weight: &[f64],
    feats: &[f64],
    dlogits: &[f64],
    n: usize,
    inp: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let out = dbias.len();
    let mut dfeat = vec![0.0; n * inp];
    for i in 0..n {
        let f = &feats[i * inp..(i + 1) * inp];
        let df = &mut dfeat[i * inp..(i + 1) * inp];
        for o in 0..out {
            let g = dlogits[i * out + o];
            dbias[o] += g;
            for j in 0..inp {
                dweight[o * inp + j] += g * f[j];
                df[j] += g * weight[o * inp + j];
            }
        }
    }
    dfeat
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (c, l) in row.iter().enumerate() {
            let p = (l - lse).exp();
            grad.push((p - if c == y { 1.0 } else { 0.0 }) / n as f64);
        }
    }
    (loss / n as f64, grad)
}
