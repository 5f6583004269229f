//! Central finite-difference gradient oracle, evaluated in `f64`.
//!
//! Panics if a `build` closure returns a non-scalar loss.

use crate::nn::{Forward, Mode, ParamId, ParamKind, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

pub const STEP: f64 = 1e-3;
/// Step for whole-model checks. Gradients of individual weights deep inside
/// the model can be orders of magnitude smaller than the curvature around
/// them, so the O(h²) truncation error of `STEP` would dominate.
pub const MODEL_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

#[derive(Debug, Default, Clone)]
pub struct Report {
    pub checked: usize,
    /// Elements whose ±h probe crossed a relu/abs/clamp kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < TOLERANCE
    }

    fn record(&mut self, group: usize, idx: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if self.worst.is_none() || rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some((group, idx, analytic, numeric));
        }
    }
}

/// Compares `analytic` against central differences of `eval`, which returns
/// the loss and the branch signature for a set of parameter groups.
pub fn compare(
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    eval: impl Fn(&[Vec<f64>]) -> (f64, Vec<bool>),
) -> Report {
    compare_with_step(params, analytic, STEP, eval)
}

pub fn compare_with_step(
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    step: f64,
    eval: impl Fn(&[Vec<f64>]) -> (f64, Vec<bool>),
) -> Report {
    let (_, base_sig) = eval(params);
    let mut probe = params.to_vec();
    let mut report = Report::default();
    for g in 0..params.len() {
        for i in 0..params[g].len() {
            let orig = params[g][i];
            probe[g][i] = orig + step;
            let (plus, sig_plus) = eval(&probe);
            probe[g][i] = orig - step;
            let (minus, sig_minus) = eval(&probe);
            probe[g][i] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            report.record(g, i, analytic[g][i], numeric);
        }
    }
    report
}

/// Gradient check for a graph built from leaf tensors. `build` receives the
/// leaves and returns a scalar loss.
pub fn check_graph(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> Report {
    let run = |values: &[Vec<f64>], want_grads: bool| {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(values)
            .map(|(t, v)| {
                g.leaf(
                    Tensor::new(t.shape().to_vec(), v.clone())
                        .expect("probe values keep the input shape")
                        .with_requires_grad(true),
                )
            })
            .collect();
        let loss = build(&mut g, &vars);
        let value = g.value(loss).data()[0];
        let grads = if want_grads {
            g.backward(loss).expect("build must return a scalar loss");
            vars.iter()
                .map(|&v| g.grad(v).map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
                .collect()
        } else {
            Vec::new()
        };
        (value, g.branch_signature(), grads)
    };
    let params: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().to_vec()).collect();
    let (_, _, analytic) = run(&params, true);
    compare(&params, &analytic, |p| {
        let (v, s, _) = run(p, false);
        (v, s)
    })
}

/// Deterministic pseudo-random tensor with entries in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    Tensor::from_fn(shape.to_vec(), |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * u - 1.0) * scale
    })
}

/// Gradient check over every trainable tensor in `store`. `build` runs a
/// forward pass and returns a scalar loss.
pub fn check_store(
    store: &ParamStore<f64>,
    mode: Mode,
    build: impl Fn(&mut Forward<'_, f64>) -> Var,
) -> Report {
    check_store_with_step(store, mode, STEP, build)
}

pub fn check_store_with_step(
    store: &ParamStore<f64>,
    mode: Mode,
    step: f64,
    build: impl Fn(&mut Forward<'_, f64>) -> Var,
) -> Report {
    let ids: Vec<ParamId> = store
        .ids()
        .filter(|&id| store.kind(id) == ParamKind::Trainable)
        .collect();
    let with_values = |values: &[Vec<f64>]| {
        let mut s = store.clone();
        for (&id, v) in ids.iter().zip(values) {
            s.get_mut(id).data_mut().copy_from_slice(v);
        }
        s
    };
    let params: Vec<Vec<f64>> = ids.iter().map(|&id| store.get(id).data().to_vec()).collect();

    let mut ctx = Forward::new(store, mode);
    let loss = build(&mut ctx);
    ctx.backward(loss).expect("build must return a scalar loss");
    let grads = ctx.param_grads();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            grads
                .iter()
                .find(|(g, _)| g == id)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| vec![0.0; store.get(*id).numel()])
        })
        .collect();

    compare_with_step(&params, &analytic, step, |values| {
        let s = with_values(values);
        let mut ctx = Forward::new(&s, mode);
        let loss = build(&mut ctx);
        (ctx.graph.value(loss).data()[0], ctx.graph.branch_signature())
    })
}
