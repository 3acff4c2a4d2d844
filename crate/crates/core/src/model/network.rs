//! Forward pass, backpropagation and second-order products for one example.
//!
//! Layer `l` computes `y_l = W_l [a_l; 1]`; hidden layers then apply the
//! activation, `a_{l+1} = φ(y_l)`, and the last pre-activation is the logit
//! vector. Weight blocks are column-major (see [`LayerShape`]).
//!
//! The Hessian-vector product uses the R-operator (forward-mode directional
//! derivative of the backward pass); the Gauss-Newton product drops the terms
//! that differentiate through the activations' curvature.

use super::{Activation, LayerShape, ModelParams};

/// Per-layer inputs `a_l` and pre-activations `y_l` of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `activations[l]` is the (unaugmented) input to layer `l`; `activations[0] = x`.
    pub activations: Vec<Vec<f64>>,
    /// `preactivations[l] = W_l [a_l; 1]`; the last entry holds the logits.
    pub preactivations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.preactivations.last().expect("at least one layer")
    }
}

/// `out = W [input; 1]`.
#[inline]
pub(crate) fn affine(w: &[f64], shape: LayerShape, input: &[f64], out: &mut [f64]) {
    let o = shape.outputs;
    out.copy_from_slice(&w[shape.inputs * o..(shape.inputs + 1) * o]);
    for (j, &a) in input.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let col = &w[j * o..(j + 1) * o];
        for (y, &wij) in out.iter_mut().zip(col) {
            *y += wij * a;
        }
    }
}

/// `W x` with the bias column dropped (input direction carries a zero in the
/// augmented slot).
#[inline]
fn linear_no_bias(w: &[f64], shape: LayerShape, input: &[f64], out: &mut [f64]) {
    let o = shape.outputs;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &a) in input.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let col = &w[j * o..(j + 1) * o];
        for (y, &wij) in out.iter_mut().zip(col) {
            *y += wij * a;
        }
    }
}

/// `out = W̃ᵀ g`, where `W̃` is `W` without its bias column.
#[inline]
fn transpose_no_bias(w: &[f64], shape: LayerShape, g: &[f64], out: &mut [f64]) {
    let o = shape.outputs;
    for (j, slot) in out.iter_mut().enumerate().take(shape.inputs) {
        let col = &w[j * o..(j + 1) * o];
        *slot = col.iter().zip(g).map(|(a, b)| a * b).sum();
    }
}

/// `grad_block += scale · δ [a; 1]ᵀ` (column-major).
#[inline]
pub(crate) fn accumulate_outer(grad: &mut [f64], shape: LayerShape, a: &[f64], delta: &[f64], scale: f64) {
    let o = shape.outputs;
    for (j, &aj) in a.iter().chain(std::iter::once(&1.0)).enumerate() {
        let s = scale * aj;
        if s == 0.0 {
            continue;
        }
        let col = &mut grad[j * o..(j + 1) * o];
        for (g, &d) in col.iter_mut().zip(delta) {
            *g += s * d;
        }
    }
}

/// Same as [`accumulate_outer`] but with a zero in the augmented slot.
#[inline]
fn accumulate_outer_no_bias(grad: &mut [f64], shape: LayerShape, a: &[f64], delta: &[f64], scale: f64) {
    let o = shape.outputs;
    for (j, &aj) in a.iter().enumerate() {
        let s = scale * aj;
        if s == 0.0 {
            continue;
        }
        let col = &mut grad[j * o..(j + 1) * o];
        for (g, &d) in col.iter_mut().zip(delta) {
            *g += s * d;
        }
    }
}

pub(crate) fn forward_unchecked(params: &ModelParams, x: &[f64]) -> ForwardCache {
    let spec = params.spec();
    let act = spec.activation();
    let layers = spec.layers();
    let mut activations = Vec::with_capacity(layers.len());
    let mut preactivations = Vec::with_capacity(layers.len());
    let mut input = x.to_vec();
    for (l, &shape) in layers.iter().enumerate() {
        let mut y = vec![0.0; shape.outputs];
        affine(params.layer(l), shape, &input, &mut y);
        let next = if l + 1 < layers.len() {
            y.iter().map(|&v| act.apply(v)).collect()
        } else {
            Vec::new()
        };
        activations.push(std::mem::replace(&mut input, next));
        preactivations.push(y);
    }
    ForwardCache {
        activations,
        preactivations,
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// `(diag(p) − p pᵀ) u`: the softmax cross-entropy Hessian with respect to logits.
pub(crate) fn softmax_hessian_times(p: &[f64], u: &[f64]) -> Vec<f64> {
    let pu: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
    p.iter().zip(u).map(|(&pi, &ui)| pi * (ui - pu)).collect()
}

/// Back-propagate an output-layer delta and return the per-layer
/// pre-activation deltas `Dy_l` (index `l` matches the layer).
pub(crate) fn layer_deltas(params: &ModelParams, cache: &ForwardCache, delta_out: &[f64]) -> Vec<Vec<f64>> {
    let spec = params.spec();
    let act = spec.activation();
    let layers = spec.layers();
    let n = layers.len();
    let mut deltas = vec![Vec::new(); n];
    deltas[n - 1] = delta_out.to_vec();
    for l in (1..n).rev() {
        let shape = layers[l];
        let mut back = vec![0.0; shape.inputs];
        transpose_no_bias(params.layer(l), shape, &deltas[l], &mut back);
        let y_prev = &cache.preactivations[l - 1];
        for (b, &y) in back.iter_mut().zip(y_prev) {
            *b *= act.derivative(y);
        }
        deltas[l - 1] = back;
    }
    deltas
}

/// `acc += scale · Jᵀ delta_out`, where `J` is the parameter-to-logit Jacobian.
pub(crate) fn backward_into(
    params: &ModelParams,
    cache: &ForwardCache,
    delta_out: &[f64],
    scale: f64,
    acc: &mut [f64],
) {
    let deltas = layer_deltas(params, cache, delta_out);
    for (l, shape) in params.spec().layers().iter().enumerate() {
        accumulate_outer(
            &mut acc[shape.range()],
            *shape,
            &cache.activations[l],
            &deltas[l],
            scale,
        );
    }
}

/// Directional derivatives along `v`: returns `(R a_l, R y_l)` for every layer.
fn r_forward(params: &ModelParams, cache: &ForwardCache, v: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let spec = params.spec();
    let act = spec.activation();
    let layers = spec.layers();
    let mut r_act = Vec::with_capacity(layers.len());
    let mut r_pre = Vec::with_capacity(layers.len());
    let mut r_input = vec![0.0; spec.input_dim()];
    for (l, &shape) in layers.iter().enumerate() {
        // R y_l = V_l [a_l; 1] + W̃_l R a_l
        let mut ry = vec![0.0; shape.outputs];
        affine(&v[shape.range()], shape, &cache.activations[l], &mut ry);
        let mut tmp = vec![0.0; shape.outputs];
        linear_no_bias(params.layer(l), shape, &r_input, &mut tmp);
        ry.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        let next = if l + 1 < layers.len() {
            cache.preactivations[l]
                .iter()
                .zip(&ry)
                .map(|(&y, &r)| act.derivative(y) * r)
                .collect()
        } else {
            Vec::new()
        };
        r_act.push(std::mem::replace(&mut r_input, next));
        r_pre.push(ry);
    }
    (r_act, r_pre)
}

/// Jacobian-vector product: the change in logits along parameter direction `v`.
pub(crate) fn jvp(params: &ModelParams, cache: &ForwardCache, v: &[f64]) -> Vec<f64> {
    let (_, mut r_pre) = r_forward(params, cache, v);
    r_pre.pop().expect("at least one layer")
}

/// `acc += scale · Jᵀ H_out J v` for one example (no penalty term).
pub(crate) fn gnh_vp_into(params: &ModelParams, cache: &ForwardCache, v: &[f64], scale: f64, acc: &mut [f64]) {
    let jv = jvp(params, cache, v);
    let p = softmax(cache.logits());
    let u = softmax_hessian_times(&p, &jv);
    backward_into(params, cache, &u, scale, acc);
}

/// `acc += scale · ∇²_θ CE(z) v` for one example (no penalty term).
pub(crate) fn hvp_into(
    params: &ModelParams,
    cache: &ForwardCache,
    label: usize,
    v: &[f64],
    scale: f64,
    acc: &mut [f64],
) {
    let spec = params.spec();
    let act: Activation = spec.activation();
    let layers = spec.layers();
    let n = layers.len();
    let (r_act, r_pre) = r_forward(params, cache, v);

    let p = softmax(cache.logits());
    let mut g: Vec<f64> = p.clone();
    g[label] -= 1.0;
    let mut rg = softmax_hessian_times(&p, &r_pre[n - 1]);

    for l in (0..n).rev() {
        let shape = layers[l];
        let block = &mut acc[shape.range()];
        // R(dW_l) = R g_l [a_l; 1]ᵀ + g_l [R a_l; 0]ᵀ
        accumulate_outer(block, shape, &cache.activations[l], &rg, scale);
        accumulate_outer_no_bias(block, shape, &r_act[l], &g, scale);
        if l == 0 {
            break;
        }
        let w = params.layer(l);
        let vl = &v[shape.range()];
        let mut b = vec![0.0; shape.inputs];
        transpose_no_bias(w, shape, &g, &mut b);
        let mut rb = vec![0.0; shape.inputs];
        transpose_no_bias(vl, shape, &g, &mut rb);
        let mut tmp = vec![0.0; shape.inputs];
        transpose_no_bias(w, shape, &rg, &mut tmp);
        rb.iter_mut().zip(&tmp).for_each(|(a, c)| *a += c);

        let y_prev = &cache.preactivations[l - 1];
        let ry_prev = &r_pre[l - 1];
        let mut g_prev = vec![0.0; shape.inputs];
        let mut rg_prev = vec![0.0; shape.inputs];
        for k in 0..shape.inputs {
            let d1 = act.derivative(y_prev[k]);
            let d2 = act.second_derivative(y_prev[k]);
            g_prev[k] = d1 * b[k];
            rg_prev[k] = d2 * ry_prev[k] * b[k] + d1 * rb[k];
        }
        g = g_prev;
        rg = rg_prev;
    }
}
