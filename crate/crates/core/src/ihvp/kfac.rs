//! K-FAC and EK-FAC for MLPs.
//!
//! For layer `l` with augmented input `ā = [a; 1]` and pre-activation
//! pseudo-gradient `Dy`, the parameter pseudo-gradient is
//! `vec(Dy āᵀ) = ā ⊗ Dy` (column-major `vec`). K-FAC approximates the layer's
//! Gauss-Newton block by `A ⊗ Y` with `A = E[ā āᵀ]` and `Y = E[Dy Dyᵀ]`.
//! EK-FAC keeps the Kronecker eigenbasis `Q_A ⊗ Q_Y` but refits the diagonal
//! as `Λ_i = E[((Q_A ⊗ Q_Y)ᵀ Dθ)_i²]`.
//!
//! Products with `Q_A ⊗ Q_Y` are never materialized; for a layer block `V`
//! (`outputs × (inputs + 1)`) we use `(Q_A ⊗ Q_Y)ᵀ vec(V) = vec(Q_Yᵀ V Q_A)`.
//! A `Λ` entry for row `k`, column `j` of that block sits at `j·outputs + k`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_len, Damping, IhvpError};
use crate::dataset::Dataset;
use crate::model::{self, forward_unchecked, layer_deltas, softmax, MlpSpec, ModelParams};
use crate::rng::derive_seed;

/// How pseudo-labels are produced when estimating curvature statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LabelSampling {
    /// `draws` labels per example from the model's softmax. Draw `d` of
    /// example `i` uses seed `derive_seed(derive_seed(seed, i), d)`, which is
    /// exactly what [`model::sample_pseudo_gradient`] consumes.
    Sampled { seed: u64, draws: usize },
    /// Exact expectation over labels, each weighted by its softmax probability.
    Expected,
}

impl LabelSampling {
    pub fn sampled(seed: u64) -> Self {
        Self::Sampled { seed, draws: 1 }
    }
}

/// Seed used for pseudo-label draw `draw` of example `index`.
pub fn pseudo_label_seed(seed: u64, index: usize, draw: usize) -> u64 {
    derive_seed(derive_seed(seed, index as u64), draw as u64)
}

/// Kronecker factors of one layer plus their eigendecompositions.
#[derive(Debug, Clone, PartialEq)]
pub struct KfacLayer {
    /// `E[ā āᵀ]`, `(inputs + 1) × (inputs + 1)`.
    pub a: DMatrix<f64>,
    /// `E[Dy Dyᵀ]`, `outputs × outputs`.
    pub y: DMatrix<f64>,
    pub q_a: DMatrix<f64>,
    pub eig_a: DVector<f64>,
    pub q_y: DMatrix<f64>,
    pub eig_y: DVector<f64>,
}

impl KfacLayer {
    pub fn new(layer: usize, a: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self, IhvpError> {
        let (q_a, eig_a) = eigen(layer, &a)?;
        let (q_y, eig_y) = eigen(layer, &y)?;
        Ok(Self {
            a,
            y,
            q_a,
            eig_a,
            q_y,
            eig_y,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfacState {
    spec: MlpSpec,
    layers: Vec<KfacLayer>,
    samples: usize,
    l2_penalty: f64,
}

impl KfacState {
    /// Build a state from explicit `(A, Y)` factor pairs, one per layer.
    pub fn from_factors(
        spec: MlpSpec,
        factors: Vec<(DMatrix<f64>, DMatrix<f64>)>,
        samples: usize,
        l2_penalty: f64,
    ) -> Result<Self, IhvpError> {
        if factors.len() != spec.num_layers() {
            return Err(IhvpError::InvalidConfig(format!(
                "{} factor pairs for {} layers",
                factors.len(),
                spec.num_layers()
            )));
        }
        let mut layers = Vec::with_capacity(factors.len());
        for (l, ((a, y), shape)) in factors.into_iter().zip(spec.layers()).enumerate() {
            if a.shape() != (shape.inputs + 1, shape.inputs + 1) || y.shape() != (shape.outputs, shape.outputs) {
                return Err(IhvpError::InvalidConfig(format!("factor shapes do not match layer {l}")));
            }
            layers.push(KfacLayer::new(l, a, y)?);
        }
        Ok(Self {
            spec,
            layers,
            samples,
            l2_penalty,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[KfacLayer] {
        &self.layers
    }

    /// Number of examples the factors were averaged over.
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn l2_penalty(&self) -> f64 {
        self.l2_penalty
    }
}

/// Eigenbasis and fitted diagonal of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfacLayer {
    pub q_a: DMatrix<f64>,
    pub q_y: DMatrix<f64>,
    /// Fitted eigenvalues, length `outputs · (inputs + 1)`, column-major.
    pub lambda: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfacState {
    spec: MlpSpec,
    layers: Vec<EkfacLayer>,
    samples: usize,
    l2_penalty: f64,
}

impl EkfacState {
    pub fn from_parts(spec: MlpSpec, layers: Vec<EkfacLayer>, samples: usize, l2_penalty: f64) -> Result<Self, IhvpError> {
        if layers.len() != spec.num_layers() {
            return Err(IhvpError::InvalidConfig(format!(
                "{} layers given for {} in the architecture",
                layers.len(),
                spec.num_layers()
            )));
        }
        for (l, (layer, shape)) in layers.iter().zip(spec.layers()).enumerate() {
            let ok = layer.q_a.shape() == (shape.inputs + 1, shape.inputs + 1)
                && layer.q_y.shape() == (shape.outputs, shape.outputs)
                && layer.lambda.len() == shape.len();
            if !ok {
                return Err(IhvpError::InvalidConfig(format!("EK-FAC shapes do not match layer {l}")));
            }
            if layer.lambda.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(IhvpError::InvalidConfig(format!("negative or non-finite eigenvalue in layer {l}")));
            }
        }
        Ok(Self {
            spec,
            layers,
            samples,
            l2_penalty,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[EkfacLayer] {
        &self.layers
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn l2_penalty(&self) -> f64 {
        self.l2_penalty
    }
}

/// Eigendecomposition after adding `1e-12 · trace / dim` to the diagonal.
/// The shift leaves eigenvectors unchanged and keeps rank-deficient factors
/// (e.g. constant activations) well posed.
fn eigen(layer: usize, m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), IhvpError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(IhvpError::Eigen {
            layer,
            reason: "non-finite covariance entries".into(),
        });
    }
    let dim = m.nrows();
    let jitter = 1e-12 * m.trace().max(0.0) / dim as f64;
    let mut shifted = (m + m.transpose()) * 0.5;
    for i in 0..dim {
        shifted[(i, i)] += jitter;
    }
    let eig = SymmetricEigen::try_new(shifted, f64::EPSILON, 0).ok_or_else(|| IhvpError::Eigen {
        layer,
        reason: "symmetric eigensolver did not converge".into(),
    })?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(IhvpError::Eigen {
            layer,
            reason: "non-finite eigenvalues".into(),
        });
    }
    Ok((eig.eigenvectors, eig.eigenvalues))
}

const CHUNK: usize = 256;

/// Row buffers for one layer: augmented inputs and (weighted) output deltas.
struct LayerRows {
    inputs: Vec<f64>,
    deltas: Vec<f64>,
    rows: usize,
}

/// Visit every (example, pseudo-label) pair in index order, appending the
/// augmented inputs `ā` and deltas `√w·Dy` of each layer as matrix rows.
/// With `weight_inputs` the inputs are scaled by `√w` as well, which is what
/// second moments of `ā` need; fourth-order terms such as
/// `w (uᵀā)² (vᵀDy)²` need the weight applied once.
/// `flush` receives full chunks; the final partial chunk is flushed at the end.
fn collect_rows(
    params: &ModelParams,
    data: &Dataset,
    sampling: LabelSampling,
    weight_inputs: bool,
    mut flush: impl FnMut(usize, &DMatrix<f64>, &DMatrix<f64>) -> Result<(), IhvpError>,
) -> Result<(), IhvpError> {
    model::check_dataset(params, data)?;
    if let LabelSampling::Sampled { draws: 0, .. } = sampling {
        return Err(IhvpError::InvalidConfig("at least one pseudo-label draw is required".into()));
    }
    let shapes = params.spec().layers().to_vec();
    let mut bufs: Vec<LayerRows> = shapes
        .iter()
        .map(|_| LayerRows {
            inputs: Vec::new(),
            deltas: Vec::new(),
            rows: 0,
        })
        .collect();

    let mut drain = |bufs: &mut Vec<LayerRows>| -> Result<(), IhvpError> {
        for (l, (buf, shape)) in bufs.iter_mut().zip(&shapes).enumerate() {
            if buf.rows == 0 {
                continue;
            }
            let a = DMatrix::from_row_slice(buf.rows, shape.inputs + 1, &buf.inputs);
            let d = DMatrix::from_row_slice(buf.rows, shape.outputs, &buf.deltas);
            flush(l, &a, &d)?;
            buf.inputs.clear();
            buf.deltas.clear();
            buf.rows = 0;
        }
        Ok(())
    };

    let classes = params.spec().classes();
    for (i, z) in data.iter().enumerate() {
        let cache = forward_unchecked(params, &z.features);
        let probs = softmax(cache.logits());
        let labels: Vec<(usize, f64)> = match sampling {
            LabelSampling::Sampled { seed, draws } => (0..draws)
                .map(|d| (model::draw_label(&probs, pseudo_label_seed(seed, i, d)), 1.0 / draws as f64))
                .collect(),
            LabelSampling::Expected => (0..classes).map(|c| (c, probs[c])).filter(|&(_, w)| w > 0.0).collect(),
        };
        for (label, weight) in labels {
            let mut delta = probs.clone();
            delta[label] -= 1.0;
            let deltas = layer_deltas(params, &cache, &delta);
            let s = weight.sqrt();
            let si = if weight_inputs { s } else { 1.0 };
            for (l, buf) in bufs.iter_mut().enumerate() {
                buf.inputs.extend(cache.activations[l].iter().map(|&a| si * a));
                buf.inputs.push(si);
                buf.deltas.extend(deltas[l].iter().map(|&d| s * d));
                buf.rows += 1;
            }
        }
        if bufs[0].rows >= CHUNK {
            drain(&mut bufs)?;
        }
    }
    drain(&mut bufs)
}

/// Fit `A_l = E[ā āᵀ]` and `Y_l = E[Dy Dyᵀ]` for every layer.
///
/// The label weights sum to one per example, so `A` is the plain average of
/// `ā āᵀ` over the dataset.
pub fn fit_kfac(params: &ModelParams, data: &Dataset, sampling: LabelSampling) -> Result<KfacState, IhvpError> {
    let shapes = params.spec().layers().to_vec();
    let mut a: Vec<DMatrix<f64>> = shapes.iter().map(|s| DMatrix::zeros(s.inputs + 1, s.inputs + 1)).collect();
    let mut y: Vec<DMatrix<f64>> = shapes.iter().map(|s| DMatrix::zeros(s.outputs, s.outputs)).collect();
    collect_rows(params, data, sampling, true, |l, rows_a, rows_d| {
        a[l].gemm_tr(1.0, rows_a, rows_a, 1.0);
        y[l].gemm_tr(1.0, rows_d, rows_d, 1.0);
        Ok(())
    })?;
    let n = data.len() as f64;
    let factors = a
        .into_iter()
        .zip(y)
        .map(|(a, y)| {
            let a = (&a + a.transpose()) * (0.5 / n);
            let y = (&y + y.transpose()) * (0.5 / n);
            (a, y)
        })
        .collect();
    KfacState::from_factors(params.spec().clone(), factors, data.len(), params.l2_penalty())
}

/// Fit K-FAC, then refit the diagonal in its Kronecker eigenbasis.
pub fn fit_ekfac(params: &ModelParams, data: &Dataset, sampling: LabelSampling) -> Result<EkfacState, IhvpError> {
    let kfac = fit_kfac(params, data, sampling)?;
    fit_ekfac_with(&kfac, params, data, sampling)
}

/// Second EK-FAC pass over an existing K-FAC fit.
pub fn fit_ekfac_with(
    kfac: &KfacState,
    params: &ModelParams,
    data: &Dataset,
    sampling: LabelSampling,
) -> Result<EkfacState, IhvpError> {
    if kfac.spec() != params.spec() {
        return Err(IhvpError::InvalidConfig("K-FAC state was fitted for another architecture".into()));
    }
    let shapes = params.spec().layers().to_vec();
    let mut lambda: Vec<DMatrix<f64>> = shapes.iter().map(|s| DMatrix::zeros(s.outputs, s.inputs + 1)).collect();
    collect_rows(params, data, sampling, false, |l, rows_a, rows_d| {
        let layer = &kfac.layers()[l];
        // Row n holds (Q_Aᵀ ā_n)ᵀ and √w (Q_Yᵀ Dy_n)ᵀ.
        let proj_a = (rows_a * &layer.q_a).map(|v| v * v);
        let proj_d = (rows_d * &layer.q_y).map(|v| v * v);
        lambda[l].gemm_tr(1.0, &proj_d, &proj_a, 1.0);
        Ok(())
    })?;
    let n = data.len() as f64;
    let layers = kfac
        .layers()
        .iter()
        .zip(lambda)
        .map(|(k, lam)| EkfacLayer {
            q_a: k.q_a.clone(),
            q_y: k.q_y.clone(),
            lambda: DVector::from_column_slice((lam / n).as_slice()),
        })
        .collect();
    EkfacState::from_parts(params.spec().clone(), layers, data.len(), params.l2_penalty())
}

/// Apply a diagonal rescaling in each layer's Kronecker eigenbasis:
/// `vec(V) ↦ (Q_A ⊗ Q_Y) diag(scale) (Q_A ⊗ Q_Y)ᵀ vec(V)`.
fn eigenbasis_map<'q>(
    spec: &MlpSpec,
    bases: impl Iterator<Item = (usize, (&'q DMatrix<f64>, &'q DMatrix<f64>))>,
    v: &DVector<f64>,
    scale: impl Fn(usize, usize, usize) -> f64,
) -> Result<DVector<f64>, IhvpError> {
    check_len(spec.param_count(), v.len())?;
    let mut out = DVector::zeros(v.len());
    for (l, (q_a, q_y)) in bases {
        let shape = spec.layers()[l];
        let block = DMatrix::from_column_slice(shape.outputs, shape.inputs + 1, &v.as_slice()[shape.range()]);
        let mut u = q_y.tr_mul(&block) * q_a;
        for j in 0..shape.inputs + 1 {
            for k in 0..shape.outputs {
                u[(k, j)] *= scale(l, j, k);
            }
        }
        let back = q_y * u * q_a.transpose();
        out.as_mut_slice()[shape.range()].copy_from_slice(back.as_slice());
    }
    Ok(out)
}

/// Sum over layers of `Σ_i u_i² · scale_i` with `u = (Q_A ⊗ Q_Y)ᵀ v`.
fn eigenbasis_quadratic<'q>(
    spec: &MlpSpec,
    bases: impl Iterator<Item = (usize, (&'q DMatrix<f64>, &'q DMatrix<f64>))>,
    v: &DVector<f64>,
    scale: impl Fn(usize, usize, usize) -> f64,
) -> Result<f64, IhvpError> {
    check_len(spec.param_count(), v.len())?;
    let mut total = 0.0;
    for (l, (q_a, q_y)) in bases {
        let shape = spec.layers()[l];
        let block = DMatrix::from_column_slice(shape.outputs, shape.inputs + 1, &v.as_slice()[shape.range()]);
        let u = q_y.tr_mul(&block) * q_a;
        for j in 0..shape.inputs + 1 {
            for k in 0..shape.outputs {
                total += u[(k, j)] * u[(k, j)] * scale(l, j, k);
            }
        }
    }
    Ok(total)
}

/// `√(λ + l2)`, the shift added to each Kronecker factor.
fn kfac_shift(state: &KfacState, damping: Damping) -> f64 {
    (damping.value() + state.l2_penalty).sqrt()
}

/// Per layer, `vec((Y + √λ'I)⁻¹ V (A + √λ'I)⁻¹)` with `λ' = λ + l2`.
pub fn apply_kfac_inverse(state: &KfacState, damping: Damping, v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
    let s = kfac_shift(state, damping);
    let layers = state.layers();
    eigenbasis_map(
        state.spec(),
        layers.iter().map(|k| (&k.q_a, &k.q_y)).enumerate(),
        v,
        |l, j, k| 1.0 / ((layers[l].eig_a[j] + s) * (layers[l].eig_y[k] + s)),
    )
}

/// `vᵀ` times [`apply_kfac_inverse`]`(v)`, computed from a single projection.
pub fn kfac_quadratic_form(state: &KfacState, damping: Damping, v: &DVector<f64>) -> Result<f64, IhvpError> {
    let s = kfac_shift(state, damping);
    let layers = state.layers();
    eigenbasis_quadratic(
        state.spec(),
        layers.iter().map(|k| (&k.q_a, &k.q_y)).enumerate(),
        v,
        |l, j, k| 1.0 / ((layers[l].eig_a[j] + s) * (layers[l].eig_y[k] + s)),
    )
}

/// `(Q_A ⊗ Q_Y)(Λ + (λ + l2)I)⁻¹(Q_A ⊗ Q_Y)ᵀ v`, layer by layer.
pub fn apply_ekfac_inverse(state: &EkfacState, damping: Damping, v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
    let shift = damping.value() + state.l2_penalty;
    let layers = state.layers();
    let spec = state.spec();
    eigenbasis_map(spec, layers.iter().map(|e| (&e.q_a, &e.q_y)).enumerate(), v, |l, j, k| {
        1.0 / (layers[l].lambda[j * spec.layers()[l].outputs + k] + shift)
    })
}

pub fn ekfac_quadratic_form(state: &EkfacState, damping: Damping, v: &DVector<f64>) -> Result<f64, IhvpError> {
    let shift = damping.value() + state.l2_penalty;
    let layers = state.layers();
    let spec = state.spec();
    eigenbasis_quadratic(spec, layers.iter().map(|e| (&e.q_a, &e.q_y)).enumerate(), v, |l, j, k| {
        1.0 / (layers[l].lambda[j * spec.layers()[l].outputs + k] + shift)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Example;
    use crate::model::Activation;
    use crate::rng;
    use rand::Rng;

    fn small_problem() -> (ModelParams, Dataset) {
        let mut r = rng::seeded(3);
        let examples = (0..40)
            .map(|i| Example::new((0..3).map(|_| r.random_range(-1.0..1.0)).collect(), i % 3))
            .collect();
        let data = Dataset::new(examples, 3, 3).unwrap();
        let params = ModelParams::init(&MlpSpec::new(vec![3, 4, 3], Activation::Tanh).unwrap(), 1);
        (params, data)
    }

    #[test]
    fn single_example_input_factor_is_its_outer_product() {
        let (params, data) = small_problem();
        let one = data.select(&[5]).unwrap();
        let state = fit_kfac(&params, &one, LabelSampling::sampled(0)).unwrap();
        let x = &one.examples()[0].features;
        let a_bar = DVector::from_iterator(4, x.iter().copied().chain(std::iter::once(1.0)));
        assert_eq!(state.layers()[0].a, &a_bar * a_bar.transpose());
    }

    #[test]
    fn factors_are_symmetric_psd_and_bases_orthonormal() {
        let (params, data) = small_problem();
        let state = fit_kfac(&params, &data, LabelSampling::sampled(9)).unwrap();
        for layer in state.layers() {
            for m in [&layer.a, &layer.y] {
                assert_eq!(m, &m.transpose());
                assert!(m.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
            }
            for q in [&layer.q_a, &layer.q_y] {
                let eye = DMatrix::<f64>::identity(q.nrows(), q.ncols());
                assert!((q.tr_mul(q) - eye).amax() < 1e-10);
            }
        }
        let ek = fit_ekfac_with(&state, &params, &data, LabelSampling::sampled(9)).unwrap();
        assert!(ek.layers().iter().all(|l| l.lambda.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn sampled_fit_matches_pseudo_gradient_draws() {
        let (params, data) = small_problem();
        let sampling = LabelSampling::sampled(17);
        let state = fit_kfac(&params, &data, sampling).unwrap();
        // Y of the output layer is the mean outer product of the sampled
        // output-layer deltas, i.e. of the bias block of the pseudo-gradient.
        let last = params.spec().layers()[1];
        let bias = last.offset + last.inputs * last.outputs..last.offset + last.len();
        let mut y = DMatrix::zeros(3, 3);
        for (i, z) in data.iter().enumerate() {
            let g = model::sample_pseudo_gradient(&params, &z.features, pseudo_label_seed(17, i, 0)).unwrap();
            let d = DVector::from_column_slice(&g.as_slice()[bias.clone()]);
            y += &d * d.transpose();
        }
        y /= data.len() as f64;
        assert!((state.layers()[1].y.clone() - y).amax() < 1e-14);
    }

    #[test]
    fn identity_factors_leave_vectors_unchanged() {
        let spec = MlpSpec::linear(2, 3).unwrap();
        let state = KfacState::from_factors(spec.clone(), vec![(DMatrix::identity(3, 3), DMatrix::identity(3, 3))], 1, 0.0).unwrap();
        let v = DVector::from_fn(9, |i, _| i as f64 - 4.0);
        let r = apply_kfac_inverse(&state, Damping::new(1e-300).unwrap(), &v).unwrap();
        assert!((r - &v).amax() < 1e-10);
    }

    #[test]
    fn ekfac_with_zero_spectrum_and_unit_damping_is_identity() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Relu).unwrap();
        let mut r = rng::seeded(4);
        let layers = spec
            .layers()
            .iter()
            .map(|s| {
                let ma = DMatrix::from_fn(s.inputs + 1, s.inputs + 1, |_, _| r.random_range(-1.0..1.0));
                let my = DMatrix::from_fn(s.outputs, s.outputs, |_, _| r.random_range(-1.0..1.0));
                EkfacLayer {
                    q_a: (&ma + ma.transpose()).symmetric_eigen().eigenvectors,
                    q_y: (&my + my.transpose()).symmetric_eigen().eigenvectors,
                    lambda: DVector::zeros(s.len()),
                }
            })
            .collect();
        let state = EkfacState::from_parts(spec.clone(), layers, 1, 0.0).unwrap();
        let v = DVector::from_fn(spec.param_count(), |i, _| (i as f64).sin());
        let out = apply_ekfac_inverse(&state, Damping::new(1.0).unwrap(), &v).unwrap();
        assert!((out - &v).amax() < 1e-12);
    }

    #[test]
    fn quadratic_forms_match_apply() {
        let (params, data) = small_problem();
        let kfac = fit_kfac(&params, &data, LabelSampling::Expected).unwrap();
        let ek = fit_ekfac_with(&kfac, &params, &data, LabelSampling::Expected).unwrap();
        let d = Damping::new(1e-2).unwrap();
        let v = DVector::from_fn(params.len(), |i, _| (i as f64 * 0.7).cos());
        let q1 = v.dot(&apply_kfac_inverse(&kfac, d, &v).unwrap());
        assert!((q1 - kfac_quadratic_form(&kfac, d, &v).unwrap()).abs() < 1e-10 * q1.abs());
        let q2 = v.dot(&apply_ekfac_inverse(&ek, d, &v).unwrap());
        assert!((q2 - ekfac_quadratic_form(&ek, d, &v).unwrap()).abs() < 1e-10 * q2.abs());
    }

    #[test]
    fn damping_acts_monotonically_per_eigencoordinate() {
        let (params, data) = small_problem();
        let ek = fit_ekfac(&params, &data, LabelSampling::sampled(1)).unwrap();
        let v = DVector::from_fn(params.len(), |i, _| 1.0 + (i % 3) as f64);
        let small = ekfac_quadratic_form(&ek, Damping::new(1e-3).unwrap(), &v).unwrap();
        let large = ekfac_quadratic_form(&ek, Damping::new(1e-1).unwrap(), &v).unwrap();
        assert!(small > large);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (params, data) = small_problem();
        let ek = fit_ekfac(&params, &data, LabelSampling::sampled(1)).unwrap();
        assert!(matches!(
            apply_ekfac_inverse(&ek, Damping::new(1.0).unwrap(), &DVector::zeros(3)),
            Err(IhvpError::DimensionMismatch { .. })
        ));
    }
}
