use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Module, NeuralError, Param, Scalar, Tensor};

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamError> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Wraps a layer together with a trainable copy of its input, so the
/// input gradient is checked through the same parameter machinery.
#[derive(Debug, Clone)]
pub struct InputProbe<F, L> {
    pub input: Param<F>,
    pub layer: L,
}

impl<F: Scalar, L> InputProbe<F, L> {
    pub fn new(input: Tensor<F>, layer: L) -> Self {
        Self { input: Param::new("input", input), layer }
    }
}

impl<F: Scalar, L: Module<F>> Module<F> for InputProbe<F, L> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.input);
        self.layer.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.input);
        self.layer.visit_mut(f);
    }
}

fn set_entry<F: Scalar, M: Module<F>>(module: &mut M, param: usize, entry: usize, value: F) {
    let mut k = 0;
    module.visit_mut(&mut |p| {
        if k == param {
            p.value.data_mut()[entry] = value;
        }
        k += 1;
    });
}

type Analytic = Vec<(String, Vec<f64>)>;

fn snapshot<F: Scalar, M: Module<F>>(module: &M) -> Analytic {
    let mut out = Vec::new();
    module.visit(&mut |p| out.push((p.name.clone(), p.grad.data().iter().map(|g| g.as_f64()).collect())));
    out
}

/// Compares analytic gradients with central differences.
///
/// `backward` must zero the gradients, run forward and backward and return
/// the loss; `loss` must only evaluate. At most `max_entries` entries per
/// parameter are probed, chosen with `seed`.
pub fn grad_check<F, M, B, L>(
    module: &mut M,
    mut backward: B,
    loss: L,
    eps: f64,
    floor: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport, NeuralError>
where
    F: Scalar,
    M: Module<F>,
    B: FnMut(&mut M) -> Result<F, NeuralError>,
    L: FnMut(&M) -> Result<F, NeuralError>,
{
    backward(module)?;
    let analytic = snapshot(module);
    numeric_report(module, &analytic, loss, eps, floor, max_entries, seed)
}

/// Like [`grad_check`], but the central differences are taken on
/// `reference`, a copy of `module` in another precision holding the same
/// parameter values. Used to check single-precision gradients against a
/// double-precision numeric oracle.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_mixed<F, G, M, N, B, L>(
    module: &mut M,
    reference: &mut N,
    mut backward: B,
    loss: L,
    eps: f64,
    floor: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport, NeuralError>
where
    F: Scalar,
    G: Scalar,
    M: Module<F>,
    N: Module<G>,
    B: FnMut(&mut M) -> Result<F, NeuralError>,
    L: FnMut(&N) -> Result<G, NeuralError>,
{
    super::cast_params(module, reference)?;
    backward(module)?;
    let analytic = snapshot(module);
    numeric_report(reference, &analytic, loss, eps, floor, max_entries, seed)
}

fn numeric_report<G, N, L>(
    module: &mut N,
    analytic: &Analytic,
    mut loss: L,
    eps: f64,
    floor: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport, NeuralError>
where
    G: Scalar,
    N: Module<G>,
    L: FnMut(&N) -> Result<G, NeuralError>,
{
    let mut values: Vec<Vec<G>> = Vec::new();
    module.visit(&mut |p| values.push(p.value.data().to_vec()));
    if values.len() != analytic.len() {
        return Err(NeuralError::ShapeMismatch { expected: alloc::vec![analytic.len()], found: alloc::vec![values.len()] });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = G::from_f64(eps);
    let mut params = Vec::with_capacity(values.len());
    let mut overall: f64 = 0.0;
    for (k, ((name, grads), values)) in analytic.iter().zip(&values).enumerate() {
        let entries: Vec<usize> = if values.len() <= max_entries {
            (0..values.len()).collect()
        } else {
            sample(&mut rng, values.len(), max_entries).into_vec()
        };
        let mut worst: f64 = 0.0;
        for &e in &entries {
            set_entry(module, k, e, values[e] + step);
            let plus = loss(module)?;
            set_entry(module, k, e, values[e] - step);
            let minus = loss(module)?;
            set_entry(module, k, e, values[e]);
            let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * eps);
            worst = worst.max(relative_error(grads[e], numeric, floor));
        }
        overall = overall.max(worst);
        params.push(ParamError { name: name.clone(), checked: entries.len(), max_rel_error: worst });
    }
    Ok(GradCheckReport { params, max_rel_error: overall })
}
