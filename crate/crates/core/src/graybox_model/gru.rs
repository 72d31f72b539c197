//! Gated recurrent unit cell and the dense kernels it is built from.
//!
//! Parameter block layout, all row-major:
//! `[W_r, U_r, b_r, W_z, U_z, b_z, W_h, U_h, b_h]` with `W_* : hidden × input`,
//! `U_* : hidden × hidden`, `b_* : hidden`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruDims {
    pub input: usize,
    pub hidden: usize,
}

impl GruDims {
    pub fn gate_len(&self) -> usize {
        self.hidden * self.input + self.hidden * self.hidden + self.hidden
    }

    pub fn len(&self) -> usize {
        3 * self.gate_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(W, U, b)` offsets of gate `g` (0 = reset, 1 = update, 2 = candidate).
    #[inline]
    fn gate(&self, g: usize) -> (usize, usize, usize) {
        let base = g * self.gate_len();
        let w = base;
        let u = w + self.hidden * self.input;
        let b = u + self.hidden * self.hidden;
        (w, u, b)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent accumulators so the loop vectorises.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += W·x`, `W` row-major `out.len() × x.len()`.
#[inline]
pub fn gemv_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ·v`, `W` row-major `v.len() × out.len()`.
#[inline]
pub fn gemv_t_add(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    for (row, &vr) in w.chunks_exact(cols).zip(v) {
        if vr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

/// `G += a·xᵀ`.
#[inline]
pub fn ger_add(g: &mut [f64], a: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &ar) in g.chunks_exact_mut(cols).zip(a) {
        if ar == 0.0 {
            continue;
        }
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += ar * xv;
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCache {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub candidate: Vec<f64>,
    pub reset_h: Vec<f64>,
}

/// One step: returns `h'` and the cache.
pub fn gru_cell(dims: GruDims, p: &[f64], x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
    debug_assert_eq!(p.len(), dims.len());
    debug_assert_eq!(x.len(), dims.input);
    debug_assert_eq!(h.len(), dims.hidden);
    let hd = dims.hidden;
    let pre = |g: usize, hin: &[f64]| {
        let (w, u, b) = dims.gate(g);
        let mut a = p[b..b + hd].to_vec();
        gemv_add(&mut a, &p[w..u], x);
        gemv_add(&mut a, &p[u..b], hin);
        a
    };
    let r: Vec<f64> = pre(0, h).into_iter().map(sigmoid).collect();
    let z: Vec<f64> = pre(1, h).into_iter().map(sigmoid).collect();
    let reset_h: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let candidate: Vec<f64> = pre(2, &reset_h).into_iter().map(f64::tanh).collect();
    let out = (0..hd).map(|i| z[i] * h[i] + (1.0 - z[i]) * candidate[i]).collect();
    (
        out,
        GruCache {
            r,
            z,
            candidate,
            reset_h,
        },
    )
}

/// Backward of [`gru_cell`]. Accumulates into `grad_p`, `dx` and `dh`.
#[allow(clippy::too_many_arguments)]
pub fn gru_cell_backward(
    dims: GruDims,
    p: &[f64],
    x: &[f64],
    h: &[f64],
    cache: &GruCache,
    d_out: &[f64],
    grad_p: &mut [f64],
    dx: &mut [f64],
    dh: &mut [f64],
) {
    let hd = dims.hidden;
    let GruCache {
        r,
        z,
        candidate,
        reset_h,
    } = cache;
    let mut da_h = vec![0.0; hd];
    let mut da_z = vec![0.0; hd];
    for i in 0..hd {
        let g = d_out[i];
        dh[i] += g * z[i];
        da_z[i] = g * (h[i] - candidate[i]) * z[i] * (1.0 - z[i]);
        da_h[i] = g * (1.0 - z[i]) * (1.0 - candidate[i] * candidate[i]);
    }

    // Candidate gate.
    let (w, u, b) = dims.gate(2);
    ger_add(&mut grad_p[w..u], &da_h, x);
    ger_add(&mut grad_p[u..b], &da_h, reset_h);
    for (gb, d) in grad_p[b..b + hd].iter_mut().zip(&da_h) {
        *gb += d;
    }
    gemv_t_add(dx, &p[w..u], &da_h);
    let mut d_reset_h = vec![0.0; hd];
    gemv_t_add(&mut d_reset_h, &p[u..b], &da_h);
    let mut da_r = vec![0.0; hd];
    for i in 0..hd {
        dh[i] += d_reset_h[i] * r[i];
        da_r[i] = d_reset_h[i] * h[i] * r[i] * (1.0 - r[i]);
    }

    for (g, da) in [(1usize, &da_z), (0usize, &da_r)] {
        let (w, u, b) = dims.gate(g);
        ger_add(&mut grad_p[w..u], da, x);
        ger_add(&mut grad_p[u..b], da, h);
        for (gb, d) in grad_p[b..b + hd].iter_mut().zip(da.iter()) {
            *gb += d;
        }
        gemv_t_add(dx, &p[w..u], da);
        gemv_t_add(dh, &p[u..b], da);
    }
}

/// Activations of a whole sequence, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerCache {
    /// `h_0 … h_T`, row-major `(T+1) × hidden`.
    pub hs: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub candidate: Vec<f64>,
}

/// Run the cell over `T = xs.len() / input` steps from `h_0 = 0`.
/// Returns the hidden states `h_1 … h_T` as a `T × hidden` matrix.
pub fn gru_layer(dims: GruDims, p: &[f64], xs: &[f64]) -> (Vec<f64>, GruLayerCache) {
    let (ni, hd) = (dims.input, dims.hidden);
    let steps = xs.len() / ni;
    let mut hs = vec![0.0; (steps + 1) * hd];
    let mut r = vec![0.0; steps * hd];
    let mut z = vec![0.0; steps * hd];
    let mut cand = vec![0.0; steps * hd];
    let mut rh = vec![0.0; hd];
    let mut a = vec![0.0; hd];
    for t in 0..steps {
        let x = &xs[t * ni..(t + 1) * ni];
        let (prev, next) = hs.split_at_mut((t + 1) * hd);
        let h = &prev[t * hd..];
        let h_out = &mut next[..hd];
        for (g, dst) in [(0usize, &mut r), (1usize, &mut z)] {
            let (w, u, b) = dims.gate(g);
            a.copy_from_slice(&p[b..b + hd]);
            gemv_add(&mut a, &p[w..u], x);
            gemv_add(&mut a, &p[u..b], h);
            for (d, v) in dst[t * hd..(t + 1) * hd].iter_mut().zip(&a) {
                *d = sigmoid(*v);
            }
        }
        for i in 0..hd {
            rh[i] = r[t * hd + i] * h[i];
        }
        let (w, u, b) = dims.gate(2);
        a.copy_from_slice(&p[b..b + hd]);
        gemv_add(&mut a, &p[w..u], x);
        gemv_add(&mut a, &p[u..b], &rh);
        for i in 0..hd {
            let c = a[i].tanh();
            cand[t * hd + i] = c;
            let zi = z[t * hd + i];
            h_out[i] = zi * h[i] + (1.0 - zi) * c;
        }
    }
    let ys = hs[hd..].to_vec();
    (
        ys,
        GruLayerCache {
            hs,
            r,
            z,
            candidate: cand,
        },
    )
}

/// `G += Σ_t a_t·x_tᵀ` for row-major `A: T × rows`, `X: T × cols`.
fn accumulate_outer(g: &mut [f64], a: &[f64], x: &[f64], rows: usize, cols: usize) {
    let steps = a.len() / rows;
    for i in 0..rows {
        let row = &mut g[i * cols..(i + 1) * cols];
        for t in 0..steps {
            let ai = a[t * rows + i];
            if ai == 0.0 {
                continue;
            }
            for (gv, xv) in row.iter_mut().zip(&x[t * cols..(t + 1) * cols]) {
                *gv += ai * xv;
            }
        }
    }
}

/// Backpropagation through time for [`gru_layer`]. `dys` is the adjoint of
/// the `T × hidden` output. Accumulates into `grad_p` and `dxs`.
pub fn gru_layer_backward(
    dims: GruDims,
    p: &[f64],
    xs: &[f64],
    cache: &GruLayerCache,
    dys: &[f64],
    grad_p: &mut [f64],
    dxs: &mut [f64],
) {
    let (ni, hd) = (dims.input, dims.hidden);
    let steps = xs.len() / ni;
    let GruLayerCache {
        hs,
        r,
        z,
        candidate,
    } = cache;
    let mut da = [vec![0.0; steps * hd], vec![0.0; steps * hd], vec![0.0; steps * hd]];
    let mut rh_all = vec![0.0; steps * hd];
    let mut dh = vec![0.0; hd];
    let mut d_rh = vec![0.0; hd];
    let (_, u_r, b_r) = dims.gate(0);
    let (_, u_z, b_z) = dims.gate(1);
    let (_, u_h, b_h) = dims.gate(2);
    for t in (0..steps).rev() {
        let o = t * hd;
        let h = &hs[o..o + hd];
        for i in 0..hd {
            dh[i] += dys[o + i];
        }
        let mut dh_prev = vec![0.0; hd];
        for i in 0..hd {
            let (zi, ci) = (z[o + i], candidate[o + i]);
            da[1][o + i] = dh[i] * (h[i] - ci) * zi * (1.0 - zi);
            da[2][o + i] = dh[i] * (1.0 - zi) * (1.0 - ci * ci);
            dh_prev[i] = dh[i] * zi;
            rh_all[o + i] = r[o + i] * h[i];
        }
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        gemv_t_add(&mut d_rh, &p[u_h..b_h], &da[2][o..o + hd]);
        for i in 0..hd {
            let ri = r[o + i];
            da[0][o + i] = d_rh[i] * h[i] * ri * (1.0 - ri);
            dh_prev[i] += d_rh[i] * ri;
        }
        gemv_t_add(&mut dh_prev, &p[u_z..b_z], &da[1][o..o + hd]);
        gemv_t_add(&mut dh_prev, &p[u_r..b_r], &da[0][o..o + hd]);
        dh = dh_prev;
    }
    let h_prev = &hs[..steps * hd];
    for g in 0..3 {
        let (w, u, b) = dims.gate(g);
        accumulate_outer(&mut grad_p[w..u], &da[g], xs, hd, ni);
        let hin = if g == 2 { &rh_all[..] } else { h_prev };
        accumulate_outer(&mut grad_p[u..b], &da[g], hin, hd, hd);
        for t in 0..steps {
            for i in 0..hd {
                grad_p[b + i] += da[g][t * hd + i];
            }
        }
        for t in 0..steps {
            gemv_t_add(&mut dxs[t * ni..(t + 1) * ni], &p[w..u], &da[g][t * hd..(t + 1) * hd]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DIMS: GruDims = GruDims { input: 3, hidden: 4 };

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_and_state_give_zero() {
        let p = vec![0.0; DIMS.len()];
        let (h, cache) = gru_cell(DIMS, &p, &[0.3, -0.2, 0.9], &[0.0; 4]);
        assert_eq!(h, vec![0.0; 4]);
        assert!(cache.z.iter().all(|z| *z == 0.5));
    }

    #[test]
    fn saturated_update_gate_freezes_state() {
        let mut p = vec![0.0; DIMS.len()];
        let (_, _, b) = DIMS.gate(1);
        for v in &mut p[b..b + 4] {
            *v = 800.0;
        }
        let h0 = [0.1, -0.4, 0.7, 0.2];
        let (h, _) = gru_cell(DIMS, &p, &[1.0, 1.0, 1.0], &h0);
        assert_eq!(h, h0.to_vec());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random(DIMS.len(), &mut rng);
        let x = random(3, &mut rng);
        let h = random(4, &mut rng);
        let loss = |p: &[f64], x: &[f64], h: &[f64]| -> f64 { gru_cell(DIMS, p, x, h).0.iter().map(|v| v * v).sum() };
        let (out, cache) = gru_cell(DIMS, &p, &x, &h);
        let d_out: Vec<f64> = out.iter().map(|v| 2.0 * v).collect();
        let mut gp = vec![0.0; p.len()];
        let mut dx = vec![0.0; 3];
        let mut dh = vec![0.0; 4];
        gru_cell_backward(DIMS, &p, &x, &h, &cache, &d_out, &mut gp, &mut dx, &mut dh);
        let step = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * step);
            let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            assert!(err < 1e-5 || (fd - analytic).abs() < 1e-9, "{analytic} vs {fd}");
        };
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += step;
            b[i] -= step;
            check(gp[i], loss(&a, &x, &h), loss(&b, &x, &h));
        }
        for i in 0..3 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += step;
            b[i] -= step;
            check(dx[i], loss(&p, &a, &h), loss(&p, &b, &h));
        }
        for i in 0..4 {
            let mut a = h.clone();
            let mut b = h.clone();
            a[i] += step;
            b[i] -= step;
            check(dh[i], loss(&p, &x, &a), loss(&p, &x, &b));
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn layer_matches_repeated_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random(DIMS.len(), &mut rng);
        let xs = random(3 * 6, &mut rng);
        let (ys, _) = gru_layer(DIMS, &p, &xs);
        let mut h = vec![0.0; 4];
        for t in 0..6 {
            h = gru_cell(DIMS, &p, &xs[t * 3..t * 3 + 3], &h).0;
            assert_eq!(&ys[t * 4..t * 4 + 4], &h[..]);
        }
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random(DIMS.len(), &mut rng);
        let xs = random(3 * 5, &mut rng);
        let wts = random(4 * 5, &mut rng);
        let loss = |p: &[f64], xs: &[f64]| -> f64 { gru_layer(DIMS, p, xs).0.iter().zip(&wts).map(|(a, b)| a * a * b).sum() };
        let (ys, cache) = gru_layer(DIMS, &p, &xs);
        let dys: Vec<f64> = ys.iter().zip(&wts).map(|(a, b)| 2.0 * a * b).collect();
        let mut gp = vec![0.0; p.len()];
        let mut dx = vec![0.0; xs.len()];
        gru_layer_backward(DIMS, &p, &xs, &cache, &dys, &mut gp, &mut dx);
        let step = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += step;
            b[i] -= step;
            let fd = (loss(&a, &xs) - loss(&b, &xs)) / (2.0 * step);
            assert!((fd - gp[i]).abs() <= 1e-5 * fd.abs().max(1e-4), "{i}: {} vs {fd}", gp[i]);
        }
        for i in 0..xs.len() {
            let mut a = xs.clone();
            let mut b = xs.clone();
            a[i] += step;
            b[i] -= step;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * step);
            assert!((fd - dx[i]).abs() <= 1e-5 * fd.abs().max(1e-4), "x{i}: {} vs {fd}", dx[i]);
        }
    }
}
