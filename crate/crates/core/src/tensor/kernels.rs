//! Raw forward/backward kernels over row-major slices.
//!
//! Feature maps are `(B, C, T, N)`; temporal kernels are `(C_out, C_in, K_t)`
//! with an implicit joint extent of one.

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub joints: usize,
    pub k_t: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn output_len(t_in: usize, k_t: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = t_in + 2 * pad;
        if stride == 0 || k_t == 0 || k_t > padded {
            return None;
        }
        Some((padded - k_t) / stride + 1)
    }

    /// Input frame read by output frame `to` at tap `k`, if inside the signal.
    #[inline]
    fn source(&self, to: usize, k: usize) -> Option<usize> {
        let t = (to * self.stride + k).checked_sub(self.pad)?;
        (t < self.t_in).then_some(t)
    }
}

pub fn conv_forward<S: Scalar>(g: &ConvGeom, x: &[S], w: &[S], bias: Option<&[S]>) -> Vec<S> {
    let n = g.joints;
    let mut out = vec![S::zero(); g.batch * g.c_out * g.t_out * n];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let ob = (b * g.c_out + o) * g.t_out * n;
            let plane = &mut out[ob..ob + g.t_out * n];
            if let Some(bias) = bias {
                plane.iter_mut().for_each(|v| *v = bias[o]);
            }
            for i in 0..g.c_in {
                let xb = (b * g.c_in + i) * g.t_in * n;
                for k in 0..g.k_t {
                    let wv = w[(o * g.c_in + i) * g.k_t + k];
                    if wv == S::zero() {
                        continue;
                    }
                    for to in 0..g.t_out {
                        let Some(t) = g.source(to, k) else { continue };
                        let src = &x[xb + t * n..xb + (t + 1) * n];
                        let dst = &mut plane[to * n..(to + 1) * n];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`.
pub fn conv_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    w: &[S],
    dy: &[S],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let n = g.joints;
    let mut dx = want_dx.then(|| vec![S::zero(); x.len()]);
    let mut dw = want_dw.then(|| vec![S::zero(); w.len()]);
    let db = want_db.then(|| {
        (0..g.c_out)
            .map(|o| {
                (0..g.batch)
                    .map(|b| {
                        let ob = (b * g.c_out + o) * g.t_out * n;
                        dy[ob..ob + g.t_out * n].iter().copied().sum::<S>()
                    })
                    .sum()
            })
            .collect()
    });
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let ob = (b * g.c_out + o) * g.t_out * n;
            for i in 0..g.c_in {
                let xb = (b * g.c_in + i) * g.t_in * n;
                for k in 0..g.k_t {
                    let wi = (o * g.c_in + i) * g.k_t + k;
                    let wv = w[wi];
                    let mut acc = S::zero();
                    for to in 0..g.t_out {
                        let Some(t) = g.source(to, k) else { continue };
                        let go = &dy[ob + to * n..ob + (to + 1) * n];
                        if let Some(dx) = dx.as_mut() {
                            let dst = &mut dx[xb + t * n..xb + (t + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(go) {
                                *d += wv * gv;
                            }
                        }
                        if want_dw {
                            let src = &x[xb + t * n..xb + (t + 1) * n];
                            for (&s, &gv) in src.iter().zip(go) {
                                acc += s * gv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// `out[r, i] = Σ_j x[r, j] · m[j, i]` for `rows` rows of length `n`.
pub fn matmul_last_forward<S: Scalar>(x: &[S], m: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for (src, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        for (j, &xv) in src.iter().enumerate() {
            if xv == S::zero() {
                continue;
            }
            let row = &m[j * n..(j + 1) * n];
            for (d, &mv) in dst.iter_mut().zip(row) {
                *d += xv * mv;
            }
        }
    }
    out
}

pub fn matmul_last_backward<S: Scalar>(
    x: &[S],
    m: &[S],
    dy: &[S],
    n: usize,
    want_dx: bool,
    want_dm: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let dx = want_dx.then(|| {
        let mut dx = vec![S::zero(); x.len()];
        for (go, dst) in dy.chunks_exact(n).zip(dx.chunks_exact_mut(n)) {
            for (j, d) in dst.iter_mut().enumerate() {
                let row = &m[j * n..(j + 1) * n];
                *d = row.iter().zip(go).map(|(&a, &b)| a * b).sum();
            }
        }
        dx
    });
    let dm = want_dm.then(|| {
        let mut dm = vec![S::zero(); n * n];
        for (src, go) in x.chunks_exact(n).zip(dy.chunks_exact(n)) {
            for (j, &xv) in src.iter().enumerate() {
                let row = &mut dm[j * n..(j + 1) * n];
                for (d, &gv) in row.iter_mut().zip(go) {
                    *d += xv * gv;
                }
            }
        }
        dm
    });
    (dx, dm)
}

/// Plain `[m, k] × [k, p]` product.
pub fn matmul_forward<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * p];
    for r in 0..m {
        for j in 0..k {
            let av = a[r * k + j];
            for c in 0..p {
                out[r * p + c] += av * b[j * p + c];
            }
        }
    }
    out
}

/// Per-channel statistics over `(B, T·N)` for a `(B, C, T, N)` map.
/// Returns `(mean, biased variance)`.
pub fn channel_stats<S: Scalar>(x: &[S], batch: usize, channels: usize, plane: usize) -> (Vec<S>, Vec<S>) {
    let count = S::lit((batch * plane) as f64);
    let mut mean = vec![S::zero(); channels];
    let mut var = vec![S::zero(); channels];
    for c in 0..channels {
        let mut s = S::zero();
        for b in 0..batch {
            let base = (b * channels + c) * plane;
            s += x[base..base + plane].iter().copied().sum::<S>();
        }
        let mu = s / count;
        let mut ss = S::zero();
        for b in 0..batch {
            let base = (b * channels + c) * plane;
            ss += x[base..base + plane].iter().map(|&v| (v - mu) * (v - mu)).sum::<S>();
        }
        mean[c] = mu;
        var[c] = ss / count;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_formula() {
        assert_eq!(ConvGeom::output_len(300, 3, 2, 1), Some(150));
        assert_eq!(ConvGeom::output_len(150, 9, 2, 4), Some(75));
        assert_eq!(ConvGeom::output_len(75, 9, 2, 4), Some(38));
        assert_eq!(ConvGeom::output_len(2, 5, 1, 1), None);
        assert_eq!(ConvGeom::output_len(4, 1, 0, 0), None);
    }
}
