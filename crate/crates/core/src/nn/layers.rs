//! Per-sample kernels. Tensors are flat `Vec<f64>` in `[channel][row][col]`
//! order; dense weights are `[unit][input]`, conv weights `[out][in][3][3]`.

pub(crate) fn conv3x3_forward(x: &[f64], c: usize, h: usize, w: usize, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let oc = bias.len();
    let hw = h * w;
    let mut out = vec![0.0; oc * hw];
    for o in 0..oc {
        let plane = &mut out[o * hw..(o + 1) * hw];
        plane.fill(bias[o]);
        for ci in 0..c {
            let input = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let wv = weights[((o * c + ci) * 3 + ky) * 3 + kx];
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let src = (y + ky - 1) * w + kx;
                        let dst = y * w;
                        for xx in x0..x1 {
                            plane[dst + xx] += wv * input[src + xx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output positions whose tap `k` (0..3) lands inside `[0, n)` with padding 1.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    (if k == 0 { 1 } else { 0 }, if k == 2 { n - 1 } else { n })
}

/// Returns the input gradient; weight and bias gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    x: &[f64],
    dout: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    dweights: Option<(&mut [f64], &mut [f64])>,
    need_dx: bool,
) -> Vec<f64> {
    let oc = dout.len() / (h * w);
    let hw = h * w;
    let mut dx = if need_dx { vec![0.0; c * hw] } else { Vec::new() };
    let (mut dw, mut db) = match dweights {
        Some((dw, db)) => (Some(dw), Some(db)),
        None => (None, None),
    };
    for o in 0..oc {
        let g = &dout[o * hw..(o + 1) * hw];
        if let Some(db) = db.as_deref_mut() {
            db[o] += g.iter().sum::<f64>();
        }
        for ci in 0..c {
            let input = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let wi = ((o * c + ci) * 3 + ky) * 3 + kx;
                    let wv = weights[wi];
                    let (x0, x1) = valid_range(kx, w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src = (y + ky - 1) * w + kx;
                        let dst = y * w;
                        for xx in x0..x1 {
                            acc += g[dst + xx] * input[src + xx - 1];
                        }
                        if need_dx {
                            let dxp = &mut dx[ci * hw..(ci + 1) * hw];
                            for xx in x0..x1 {
                                dxp[src + xx - 1] += wv * g[dst + xx];
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
    dx
}

/// 2x2 max pool with stride 2 (odd trailing rows/cols dropped). Returns the
/// output and, per output cell, the flat index of the winning input (first
/// maximum on ties).
pub(crate) fn maxpool2_forward(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * xx;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn dense_forward(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len();
    bias.iter().enumerate().map(|(u, b)| b + weights[u * n..(u + 1) * n].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).collect()
}

pub(crate) fn dense_backward(
    x: &[f64],
    dout: &[f64],
    weights: &[f64],
    dweights: Option<(&mut [f64], &mut [f64])>,
    need_dx: bool,
) -> Vec<f64> {
    let n = x.len();
    if let Some((dw, db)) = dweights {
        for (u, g) in dout.iter().enumerate() {
            db[u] += g;
            for (d, v) in dw[u * n..(u + 1) * n].iter_mut().zip(x) {
                *d += g * v;
            }
        }
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; n];
    for (u, g) in dout.iter().enumerate() {
        for (d, w) in dx.iter_mut().zip(&weights[u * n..(u + 1) * n]) {
            *d += g * w;
        }
    }
    dx
}

pub(crate) const LOGIT_CLAMP: f64 = 30.0;
pub(crate) const LOG_EPS: f64 = 1e-12;

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = z.iter().map(|v| v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).collect();
    let m = clamped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = clamped.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Binary cross-entropy averaged over units.
pub(crate) fn bce(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(&p, &y)| -(y * p.max(LOG_EPS).ln() + (1.0 - y) * (1.0 - p).max(LOG_EPS).ln())).sum::<f64>() / p.len() as f64
}

pub(crate) fn cross_entropy(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).filter(|(_, &y)| y != 0.0).map(|(&p, &y)| -y * p.max(LOG_EPS).ln()).sum()
}
