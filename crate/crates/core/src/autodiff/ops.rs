//! Forward and adjoint kernels on raw row-major slices.

/// Dimensions of a valid, stride-1 temporal convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub t_in: usize,
    pub c_in: usize,
    pub taps: usize,
    pub c_out: usize,
}

impl ConvDims {
    pub fn t_out(&self) -> usize {
        self.t_in - self.taps + 1
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    let t_out = d.t_out();
    let mut out = vec![0.0; d.batch * t_out * d.c_out];
    for n in 0..d.batch {
        let xn = &x[n * d.t_in * d.c_in..(n + 1) * d.t_in * d.c_in];
        for t in 0..t_out {
            let orow = &mut out[(n * t_out + t) * d.c_out..(n * t_out + t + 1) * d.c_out];
            orow.copy_from_slice(b);
            for k in 0..d.taps {
                let xrow = &xn[(t + k) * d.c_in..(t + k + 1) * d.c_in];
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w[(k * d.c_in + i) * d.c_out..(k * d.c_in + i + 1) * d.c_out];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
    }
    out
}

/// Accumulates adjoints of a convolution into whichever targets are present.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let t_out = d.t_out();
    for n in 0..d.batch {
        for t in 0..t_out {
            let grow = &g[(n * t_out + t) * d.c_out..(n * t_out + t + 1) * d.c_out];
            if let Some(db) = db.as_deref_mut() {
                for (acc, &gv) in db.iter_mut().zip(grow) {
                    *acc += gv;
                }
            }
            for k in 0..d.taps {
                let base = (n * d.t_in + t + k) * d.c_in;
                for i in 0..d.c_in {
                    let woff = (k * d.c_in + i) * d.c_out;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wrow = &w[woff..woff + d.c_out];
                        dx[base + i] += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        let xv = x[base + i];
                        if xv != 0.0 {
                            for (acc, &gv) in dw[woff..woff + d.c_out].iter_mut().zip(grow) {
                                *acc += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Normalizes each contiguous row of width `width`; returns (output, x_hat, 1/std).
pub(crate) fn layer_norm_forward(
    x: &[f64],
    gain: &[f64],
    shift: &[f64],
    width: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / width;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * width..(r + 1) * width];
        let mean = xr.iter().sum::<f64>() / width as f64;
        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..width {
            let h = (xr[c] - mean) * is;
            xhat[r * width + c] = h;
            out[r * width + c] = h * gain[c] + shift[c];
        }
    }
    (out, xhat, inv_std)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    g: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gain: &[f64],
    width: usize,
    mut dx: Option<&mut [f64]>,
    mut dgain: Option<&mut [f64]>,
    mut dshift: Option<&mut [f64]>,
) {
    let rows = g.len() / width;
    let mut gh = vec![0.0; width];
    for r in 0..rows {
        let gr = &g[r * width..(r + 1) * width];
        let hr = &xhat[r * width..(r + 1) * width];
        if let Some(dgain) = dgain.as_deref_mut() {
            for c in 0..width {
                dgain[c] += gr[c] * hr[c];
            }
        }
        if let Some(dshift) = dshift.as_deref_mut() {
            for c in 0..width {
                dshift[c] += gr[c];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            for c in 0..width {
                gh[c] = gr[c] * gain[c];
            }
            let mean_g = gh.iter().sum::<f64>() / width as f64;
            let mean_gh = gh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / width as f64;
            for c in 0..width {
                dx[r * width + c] += inv_std[r] * (gh[c] - mean_g - hr[c] * mean_gh);
            }
        }
    }
}

/// `out[n×o] = x[n×i] · w[i×o] + b[o]`
pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64], d_in: usize, d_out: usize) -> Vec<f64> {
    let rows = x.len() / d_in;
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let orow = &mut out[r * d_out..(r + 1) * d_out];
        orow.copy_from_slice(b);
        for (i, &xv) in x[r * d_in..(r + 1) * d_in].iter().enumerate() {
            for (o, &wv) in orow.iter_mut().zip(&w[i * d_out..(i + 1) * d_out]) {
                *o += xv * wv;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d_in: usize,
    d_out: usize,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let rows = x.len() / d_in;
    for r in 0..rows {
        let grow = &g[r * d_out..(r + 1) * d_out];
        if let Some(db) = db.as_deref_mut() {
            for (acc, &gv) in db.iter_mut().zip(grow) {
                *acc += gv;
            }
        }
        for i in 0..d_in {
            let wrow = &w[i * d_out..(i + 1) * d_out];
            if let Some(dx) = dx.as_deref_mut() {
                dx[r * d_in + i] += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
            }
            if let Some(dw) = dw.as_deref_mut() {
                let xv = x[r * d_in + i];
                for (acc, &gv) in dw[i * d_out..(i + 1) * d_out].iter_mut().zip(grow) {
                    *acc += xv * gv;
                }
            }
        }
    }
}

/// Mean over the middle (time) axis of an `N×T×C` array.
pub(crate) fn avg_pool_forward(x: &[f64], n: usize, t: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    let scale = 1.0 / t as f64;
    for b in 0..n {
        let orow = &mut out[b * c..(b + 1) * c];
        for s in 0..t {
            for (o, &v) in orow.iter_mut().zip(&x[(b * t + s) * c..(b * t + s + 1) * c]) {
                *o += v;
            }
        }
        orow.iter_mut().for_each(|o| *o *= scale);
    }
    out
}

/// Row-wise log-softmax cross-entropy averaged over rows; returns (loss, softmax probabilities).
pub(crate) fn softmax_ce_forward(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let rows = labels.len();
    let mut probs = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let lr = &logits[r * classes..(r + 1) * classes];
        let max = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = lr.iter().map(|v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        for c in 0..classes {
            probs[r * classes + c] = (lr[c] - max).exp() / denom;
        }
        loss += log_denom - (lr[label] - max);
    }
    (loss / rows as f64, probs)
}
