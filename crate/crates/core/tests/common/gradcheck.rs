//! Central finite differences against the analytic backward pass, in f64.

use adiff_core::tensor::{Graph, GroupSet, ParamId, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand::Rng;

pub const STEP: f64 = 1e-5;
/// Magnitudes below this are compared absolutely rather than relatively. Central
/// differences carry roundoff of about 1e-16 * |loss| / STEP, so exactly-zero
/// gradients (for example key biases under softmax) read as ~1e-10 numerically.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Max relative error over every element of every input.
/// `f` builds a scalar loss from leaves holding the inputs.
pub fn check_inputs(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = t.data()[j] + STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = t.data()[j] - STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

/// Max relative error over parameters of `store` in `groups`, probing at most
/// `per_tensor` coordinates of each parameter tensor. Ids in `skip` are left out.
#[allow(clippy::too_many_arguments)]
pub fn check_params<R: Rng>(
    store: &ParamStore<f64>,
    groups: GroupSet,
    skip: &[ParamId],
    per_tensor: usize,
    rng: &mut R,
    loss: &dyn Fn(&mut Graph<f64>) -> Var,
) -> (f64, usize) {
    let grads = {
        let mut g = Graph::with_params(store, groups);
        let l = loss(&mut g);
        g.backward(l).unwrap()
    };
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::with_params(s, GroupSet::EMPTY);
        let l = loss(&mut g);
        g.value(l).item()
    };
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    let ids: Vec<ParamId> = store.ids_in(groups).into_iter().filter(|id| !skip.contains(id)).collect();
    for id in ids {
        let n = store.value(id).len();
        let analytic = grads.param_or_zeros(id, store);
        let coords: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { sample(rng, n, per_tensor).into_vec() };
        for j in coords {
            let orig = store.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + STEP;
            let up = eval(&work);
            work.value_mut(id).data_mut()[j] = orig - STEP;
            let down = eval(&work);
            work.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(analytic.data()[j], numeric);
            if e > worst {
                if std::env::var("GC_DEBUG").is_ok() {
                    eprintln!("{} [{j}] analytic {:e} numeric {:e}", store.get(id).name, analytic.data()[j], numeric);
                }
                worst = e;
            }
            probed += 1;
        }
    }
    (worst, probed)
}
