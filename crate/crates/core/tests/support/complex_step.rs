//! Independent derivative oracles for MLP softmax cross-entropy.
//!
//! The network is re-implemented over complex numbers so that
//! `Im ∇L(θ + i·h·v) / h` gives the exact Hessian-vector product up to
//! rounding (complex-step differentiation, no subtractive cancellation).
//! Nothing here calls into the crate's differentiation code.

use num_complex::Complex64 as C64;

use influence::model::{Activation, MlpSpec};

fn act(a: Activation, y: C64) -> C64 {
    match a {
        Activation::Relu => {
            if y.re > 0.0 {
                y
            } else {
                C64::new(0.0, 0.0)
            }
        }
        Activation::Tanh => y.tanh(),
    }
}

fn act_d(a: Activation, y: C64) -> C64 {
    match a {
        Activation::Relu => {
            if y.re > 0.0 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }
        Activation::Tanh => {
            let t = y.tanh();
            C64::new(1.0, 0.0) - t * t
        }
    }
}

/// Gradient of cross-entropy (plus `(l2/2)‖θ‖²`) evaluated at complex parameters.
pub fn complex_grad(spec: &MlpSpec, theta: &[C64], x: &[f64], label: usize, l2: f64) -> Vec<C64> {
    let layers = spec.layers();
    let mut acts: Vec<Vec<C64>> = vec![x.iter().map(|&v| C64::new(v, 0.0)).collect()];
    let mut pres: Vec<Vec<C64>> = Vec::new();
    for (l, s) in layers.iter().enumerate() {
        let w = &theta[s.range()];
        let a = &acts[l];
        let mut y = vec![C64::new(0.0, 0.0); s.outputs];
        for i in 0..s.outputs {
            let mut acc = w[s.inputs * s.outputs + i];
            for j in 0..s.inputs {
                acc += w[j * s.outputs + i] * a[j];
            }
            y[i] = acc;
        }
        if l + 1 < layers.len() {
            acts.push(y.iter().map(|&v| act(spec.activation(), v)).collect());
        }
        pres.push(y);
    }
    let logits = pres.last().unwrap();
    let max = logits.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<C64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: C64 = exps.iter().sum();
    let mut delta: Vec<C64> = exps.iter().map(|&e| e / total).collect();
    delta[label] -= 1.0;

    let mut grad = vec![C64::new(0.0, 0.0); theta.len()];
    for l in (0..layers.len()).rev() {
        let s = layers[l];
        for j in 0..=s.inputs {
            let aj = if j < s.inputs { acts[l][j] } else { C64::new(1.0, 0.0) };
            for i in 0..s.outputs {
                grad[s.offset + j * s.outputs + i] = delta[i] * aj;
            }
        }
        if l > 0 {
            let w = &theta[s.range()];
            let mut back = vec![C64::new(0.0, 0.0); s.inputs];
            for (j, b) in back.iter_mut().enumerate() {
                for i in 0..s.outputs {
                    *b += w[j * s.outputs + i] * delta[i];
                }
                *b *= act_d(spec.activation(), pres[l - 1][j]);
            }
            delta = back;
        }
    }
    for (g, t) in grad.iter_mut().zip(theta) {
        *g += *t * l2;
    }
    grad
}

/// Exact (to rounding) `H v` for the mean loss over `(x, label)` pairs.
pub fn complex_step_hvp(
    spec: &MlpSpec,
    theta: &[f64],
    data: &[(Vec<f64>, usize)],
    v: &[f64],
    l2: f64,
) -> Vec<f64> {
    let h = 1e-30;
    let shifted: Vec<C64> = theta.iter().zip(v).map(|(&t, &d)| C64::new(t, h * d)).collect();
    let mut out = vec![0.0; theta.len()];
    for (x, y) in data {
        let g = complex_grad(spec, &shifted, x, *y, l2);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += gi.im / h;
        }
    }
    out.iter_mut().for_each(|o| *o /= data.len() as f64);
    out
}

/// Dense Hessian assembled column by column from [`complex_step_hvp`].
pub fn complex_step_hessian(spec: &MlpSpec, theta: &[f64], data: &[(Vec<f64>, usize)], l2: f64) -> Vec<Vec<f64>> {
    let p = theta.len();
    (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            complex_step_hvp(spec, theta, data, &e, l2)
        })
        .collect()
}

/// Central finite differences of the per-example loss.
pub fn finite_difference_grad(loss: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            let orig = t[k];
            t[k] = orig + h;
            let up = loss(&t);
            t[k] = orig - h;
            let down = loss(&t);
            t[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Logits at complex parameters.
pub fn complex_logits(spec: &MlpSpec, theta: &[C64], x: &[f64]) -> Vec<C64> {
    let layers = spec.layers();
    let mut a: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    for (l, s) in layers.iter().enumerate() {
        let w = &theta[s.range()];
        let y: Vec<C64> = (0..s.outputs)
            .map(|i| (0..s.inputs).fold(w[s.inputs * s.outputs + i], |acc, j| acc + w[j * s.outputs + i] * a[j]))
            .collect();
        if l + 1 == layers.len() {
            return y;
        }
        a = y.iter().map(|&v| act(spec.activation(), v)).collect();
    }
    unreachable!("a spec has at least one layer")
}

/// Dense Gauss-Newton matrix `mean Jᵀ (diag p − ppᵀ) J + l2·I`, with the
/// logit Jacobian `J` taken column by column by complex steps.
pub fn complex_step_gnh(spec: &MlpSpec, theta: &[f64], data: &[(Vec<f64>, usize)], l2: f64) -> Vec<Vec<f64>> {
    let p = theta.len();
    let c = spec.classes();
    let h = 1e-30;
    let mut out = vec![vec![0.0; p]; p];
    for (x, _) in data {
        let base: Vec<C64> = theta.iter().map(|&t| C64::new(t, 0.0)).collect();
        let logits: Vec<f64> = complex_logits(spec, &base, x).iter().map(|z| z.re).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let s: f64 = e.iter().sum();
        let prob: Vec<f64> = e.iter().map(|v| v / s).collect();
        // jac[k][i] = ∂ logit_i / ∂ θ_k
        let jac: Vec<Vec<f64>> = (0..p)
            .map(|k| {
                let mut t = base.clone();
                t[k].im = h;
                complex_logits(spec, &t, x).iter().map(|z| z.im / h).collect()
            })
            .collect();
        for a in 0..p {
            let pa: f64 = (0..c).map(|i| prob[i] * jac[a][i]).sum();
            for b in 0..p {
                let pb: f64 = (0..c).map(|i| prob[i] * jac[b][i]).sum();
                let diag: f64 = (0..c).map(|i| prob[i] * jac[a][i] * jac[b][i]).sum();
                out[a][b] += diag - pa * pb;
            }
        }
    }
    for (a, row) in out.iter_mut().enumerate() {
        row.iter_mut().for_each(|v| *v /= data.len() as f64);
        row[a] += l2;
    }
    out
}
