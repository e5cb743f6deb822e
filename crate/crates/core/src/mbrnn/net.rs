//! Stacked LSTM forward pass, softmax head, loss, and backpropagation through time.

use super::params::{Layout, ModelParams, Real};
use crate::error::{invalid, Result};
use crate::metrics::sae;

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    acc.iter().fold(s, |a, b| a + *b)
}

/// `out[r] += Σ_c w[r, c] x[c]` for row-major `w` of `out.len()` rows.
fn matvec_add<F: Real>(w: &[F], x: &[F], out: &mut [F]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out[c] += Σ_r w[r, c] d[r]`.
fn matvec_t_add<F: Real>(w: &[F], d: &[F], out: &mut [F]) {
    let cols = out.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == F::zero() {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += *dr * *wv;
        }
    }
}

/// `g[r, c] += d[r] x[c]`.
fn outer_add<F: Real>(g: &mut [F], d: &[F], x: &[F]) {
    let cols = x.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == F::zero() {
            continue;
        }
        for (gv, xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *gv += *dr * *xv;
        }
    }
}

/// Activations kept for the backward pass. Per layer, `T` blocks of
/// `[i, f, g, o, c, tanh c, h]`, each `H` long.
pub(crate) struct Trace<F> {
    layers: Vec<Vec<F>>,
    pub probs: Vec<F>,
}

const SLOTS: usize = 7;

fn check_input<F: Real>(p: &ModelParams<F>, x: &[F], t: usize) -> Result<()> {
    let d = p.arch.input();
    if t == 0 || x.len() != t * d {
        return invalid(format!("input has {} values, expected {t} x {d}", x.len()));
    }
    Ok(())
}

/// Runs the network on a flat `T × D` input, keeping all activations.
pub(crate) fn forward_trace<F: Real>(p: &ModelParams<F>, x: &[F], t: usize) -> Trace<F> {
    let a = p.arch;
    let lay = Layout::of(&a);
    let h = a.hidden;
    let mut layers: Vec<Vec<F>> = Vec::with_capacity(a.layers);
    let mut z = vec![F::zero(); 4 * h];
    for (k, lo) in lay.layers.iter().enumerate() {
        let w_ih = &p.data[lo.w_ih..lo.w_hh];
        let w_hh = &p.data[lo.w_hh..lo.bias];
        let bias = &p.data[lo.bias..lo.bias + 4 * h];
        let mut tr = vec![F::zero(); t * SLOTS * h];
        let zero_h = vec![F::zero(); h];
        for s in 0..t {
            let input: &[F] = if k == 0 {
                &x[s * lo.input..(s + 1) * lo.input]
            } else {
                let prev = &layers[k - 1];
                &prev[(s * SLOTS + 6) * h..(s * SLOTS + 7) * h]
            };
            z.copy_from_slice(bias);
            matvec_add(w_ih, input, &mut z);
            let (done, rest) = tr.split_at_mut(s * SLOTS * h);
            let (h_prev, c_prev) = if s == 0 {
                (&zero_h[..], &zero_h[..])
            } else {
                let base = (s - 1) * SLOTS * h;
                (&done[base + 6 * h..base + 7 * h], &done[base + 4 * h..base + 5 * h])
            };
            matvec_add(w_hh, h_prev, &mut z);
            let cur = &mut rest[..SLOTS * h];
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                let c = f * c_prev[j] + i * g;
                let tc = c.tanh();
                cur[j] = i;
                cur[h + j] = f;
                cur[2 * h + j] = g;
                cur[3 * h + j] = o;
                cur[4 * h + j] = c;
                cur[5 * h + j] = tc;
                cur[6 * h + j] = o * tc;
            }
        }
        layers.push(tr);
    }
    let top = &layers[a.layers - 1];
    let (hw, hb) = (&p.data[lay.head_w..lay.head_b], &p.data[lay.head_b..lay.total]);
    let o = a.output;
    let mut probs = vec![F::zero(); t * o];
    for s in 0..t {
        let out = &mut probs[s * o..(s + 1) * o];
        out.copy_from_slice(hb);
        matvec_add(hw, &top[(s * SLOTS + 6) * h..(s * SLOTS + 7) * h], out);
        let m = out.iter().fold(F::neg_infinity(), |a, b| a.max(*b));
        let mut sum = F::zero();
        for v in out.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in out.iter_mut() {
            *v = *v / sum;
        }
    }
    Trace { layers, probs }
}

/// Row-stochastic `T × (l+1)` prediction for a `T × D` feature matrix.
pub fn forward<F: Real>(p: &ModelParams<F>, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let flat: Vec<F> = x.iter().flatten().map(|v| F::of(*v)).collect();
    check_input(p, &flat, x.len())?;
    let tr = forward_trace(p, &flat, x.len());
    Ok(tr.probs.chunks(p.arch.output).map(|r| r.iter().map(|v| v.f64()).collect()).collect())
}

/// Loss split into the mean-SAE term and the mean-max term.
pub fn loss_terms(y: &[&[Vec<f64>]], yhat: &[&[Vec<f64>]]) -> (f64, f64) {
    let (mut s, mut m, mut n) = (0.0, 0.0, 0usize);
    for (a, b) in y.iter().zip(yhat) {
        for (ra, rb) in a.iter().zip(b.iter()) {
            s += sae(ra, rb);
            m += ra.iter().zip(rb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            n += 1;
        }
    }
    (s / n as f64, m / n as f64)
}

/// Mean SAE per period plus mean max absolute error per period.
pub fn loss(y: &[&[Vec<f64>]], yhat: &[&[Vec<f64>]]) -> f64 {
    let (a, b) = loss_terms(y, yhat);
    a + b
}

fn sign<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Loss of one sample (scaled by `weight`) and its gradient, accumulated into `grad`.
pub(crate) fn backward<F: Real>(p: &ModelParams<F>, x: &[F], y: &[F], t: usize, weight: F, grad: &mut [F]) -> F {
    let a = p.arch;
    let lay = Layout::of(&a);
    let (h, o) = (a.hidden, a.output);
    let tr = forward_trace(p, x, t);
    let scale = weight / F::of(t as f64);

    let mut loss = F::zero();
    let mut dh_in = vec![F::zero(); t * h];
    let mut g = vec![F::zero(); o];
    let top = &tr.layers[a.layers - 1];
    for s in 0..t {
        let yh = &tr.probs[s * o..(s + 1) * o];
        let ys = &y[s * o..(s + 1) * o];
        let mut arg = 0;
        let mut best = F::neg_infinity();
        for k in 0..o {
            let d = yh[k] - ys[k];
            loss += d.abs() * scale;
            g[k] = sign(d) * scale;
            if d.abs() > best {
                best = d.abs();
                arg = k;
            }
        }
        loss += best * scale;
        g[arg] += sign(yh[arg] - ys[arg]) * scale;
        let inner = g.iter().zip(yh).fold(F::zero(), |acc, (gv, pv)| acc + *gv * *pv);
        let dlogit: Vec<F> = g.iter().zip(yh).map(|(gv, pv)| *pv * (*gv - inner)).collect();
        let hs = &top[(s * SLOTS + 6) * h..(s * SLOTS + 7) * h];
        outer_add(&mut grad[lay.head_w..lay.head_b], &dlogit, hs);
        for (gb, d) in grad[lay.head_b..lay.total].iter_mut().zip(&dlogit) {
            *gb += *d;
        }
        matvec_t_add(&p.data[lay.head_w..lay.head_b], &dlogit, &mut dh_in[s * h..(s + 1) * h]);
    }

    let zero_h = vec![F::zero(); h];
    let mut dz = vec![F::zero(); 4 * h];
    for k in (0..a.layers).rev() {
        let lo = lay.layers[k];
        let cur = &tr.layers[k];
        let w_ih = &p.data[lo.w_ih..lo.w_hh];
        let w_hh = &p.data[lo.w_hh..lo.bias];
        let mut dx = if k > 0 { vec![F::zero(); t * h] } else { Vec::new() };
        let mut dh_next = vec![F::zero(); h];
        let mut dc_next = vec![F::zero(); h];
        for s in (0..t).rev() {
            let b = s * SLOTS * h;
            let (c_prev, h_prev) = if s == 0 {
                (&zero_h[..], &zero_h[..])
            } else {
                let pb = (s - 1) * SLOTS * h;
                (&cur[pb + 4 * h..pb + 5 * h], &cur[pb + 6 * h..pb + 7 * h])
            };
            for j in 0..h {
                let (i, f, gg, og) = (cur[b + j], cur[b + h + j], cur[b + 2 * h + j], cur[b + 3 * h + j]);
                let tc = cur[b + 5 * h + j];
                let dh = dh_in[s * h + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * og * (F::one() - tc * tc) + dc_next[j];
                dc_next[j] = dc * f;
                dz[j] = dc * gg * i * (F::one() - i);
                dz[h + j] = dc * c_prev[j] * f * (F::one() - f);
                dz[2 * h + j] = dc * i * (F::one() - gg * gg);
                dz[3 * h + j] = d_o * og * (F::one() - og);
            }
            let input: &[F] = if k == 0 {
                &x[s * lo.input..(s + 1) * lo.input]
            } else {
                let below = &tr.layers[k - 1];
                &below[(s * SLOTS + 6) * h..(s * SLOTS + 7) * h]
            };
            outer_add(&mut grad[lo.w_ih..lo.w_hh], &dz, input);
            outer_add(&mut grad[lo.w_hh..lo.bias], &dz, h_prev);
            for (gb, d) in grad[lo.bias..lo.bias + 4 * h].iter_mut().zip(&dz) {
                *gb += *d;
            }
            dh_next.iter_mut().for_each(|v| *v = F::zero());
            matvec_t_add(w_hh, &dz, &mut dh_next);
            if k > 0 {
                matvec_t_add(w_ih, &dz, &mut dx[s * h..(s + 1) * h]);
            }
        }
        if k > 0 {
            dh_in = dx;
        }
    }
    loss
}

/// Mean loss and gradient over a batch of flat `(x, y, T)` samples.
pub fn grad<F: Real>(p: &ModelParams<F>, batch: &[(&[F], &[F], usize)]) -> (F, Vec<F>) {
    let w = F::one() / F::of(batch.len() as f64);
    let mut g = vec![F::zero(); p.len()];
    let mut l = F::zero();
    for (x, y, t) in batch {
        l += backward(p, x, y, *t, w, &mut g);
    }
    (l, g)
}

/// Worst `|a − n| / max(|a|, |n|, floor)` between the analytic gradient and
/// central differences with step `eps`.
pub fn gradient_check(p: &ModelParams<f64>, batch: &[(&[f64], &[f64], usize)], eps: f64, floor: f64) -> f64 {
    let (_, g) = grad(p, batch);
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let v = q.data[i];
        q.data[i] = v + eps;
        let lp = grad(&q, batch).0;
        q.data[i] = v - eps;
        let lm = grad(&q, batch).0;
        q.data[i] = v;
        let num = (lp - lm) / (2.0 * eps);
        worst = worst.max((g[i] - num).abs() / g[i].abs().max(num.abs()).max(floor));
    }
    worst
}
