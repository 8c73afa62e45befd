use serde::Serialize;

use super::params::ParamStore;
use super::Tensor;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: Option<usize>,
    pub step: f64,
    /// Scalars whose `+-step` probes crossed a kink and were not compared.
    pub skipped_kinks: usize,
    /// Compared scalars whose gradient magnitude was below the floor.
    pub below_floor: usize,
}

impl GradCheckReport {
    pub fn is_empty(&self) -> bool {
        self.checked == 0
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub step: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl FdOptions {
    pub fn new(step: f64) -> Self {
        FdOptions { step, floor: 1e-8 }
    }
}

/// One loss evaluation: the value and, for piecewise functions, the kink
/// pattern from [`Graph::kink_pattern`](super::Graph::kink_pattern).
#[derive(Debug, Clone, Default)]
pub struct Probe {
    pub value: f64,
    pub kinks: Vec<bool>,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Probe { value, kinks: Vec::new() }
    }
}

/// Perturbs every scalar of `store` by `+-step` and compares
/// `(f(x+h) - f(x-h)) / 2h` against `analytic`. Relative error uses the
/// denominator `max(|analytic|, |numeric|, floor)`. A scalar whose probes
/// change the kink pattern is counted in `skipped_kinks` instead: the
/// difference quotient there measures the jump, not the derivative.
pub fn finite_diff_check<P: Into<Probe>>(
    store: &ParamStore,
    analytic: &[Tensor],
    opts: FdOptions,
    mut loss: impl FnMut(&ParamStore) -> P,
) -> GradCheckReport {
    let step = opts.step;
    let mut report = GradCheckReport {
        step,
        ..GradCheckReport::default()
    };
    if store.iter().next().is_none() {
        return report;
    }
    let base = loss(store).into().kinks;
    let mut probe = store.clone();
    for (pi, (id, name, tensor)) in store.iter().enumerate() {
        for k in 0..tensor.len() {
            let orig = tensor.data()[k];
            probe.get_mut(id).data_mut()[k] = orig + step;
            let plus = loss(&probe).into();
            probe.get_mut(id).data_mut()[k] = orig - step;
            let minus = loss(&probe).into();
            probe.get_mut(id).data_mut()[k] = orig;
            if plus.kinks != base || minus.kinks != base {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * step);
            let a = analytic[pi].data()[k];
            let magnitude = a.abs().max(numeric.abs());
            if magnitude < opts.floor {
                report.below_floor += 1;
            }
            let rel = (a - numeric).abs() / magnitude.max(opts.floor);
            report.checked += 1;
            if report.worst_param.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some(name.to_string());
                report.worst_index = Some(k);
            }
        }
    }
    report
}
#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    /// Least squares `sum (w x + b - y)^2`; analytic gradient written out.
    #[test]
    fn linear_regression_toy() {
        let xs = [0.5, -1.0, 2.0, 0.25];
        let ys = [1.0, -0.5, 3.0, 0.7];
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.3));
        let b = store.add("b", Tensor::scalar(-0.1));
        let loss = |s: &ParamStore| -> f64 {
            let (wv, bv) = (s.get(w).item(), s.get(b).item());
            xs.iter().zip(&ys).map(|(x, y)| (wv * x + bv - y).powi(2)).sum()
        };
        let (wv, bv) = (0.3, -0.1);
        let gw: f64 = xs.iter().zip(&ys).map(|(x, y)| 2.0 * (wv * x + bv - y) * x).sum();
        let gb: f64 = xs.iter().zip(&ys).map(|(x, y)| 2.0 * (wv * x + bv - y)).sum();
        let report = finite_diff_check(&store, &[Tensor::scalar(gw), Tensor::scalar(gb)], FdOptions::new(1e-5), loss);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-8, "{report:?}");

        // Same model through the tape.
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let bv = g.param(&store, b);
        let x = g.constant(Tensor::from_vec(4, 1, xs.to_vec()));
        let y = g.constant(Tensor::from_vec(4, 1, ys.to_vec()));
        let pred = g.matmul(x, wv).unwrap();
        let pred = g.add_row(pred, bv).unwrap();
        let r = g.sub(pred, y).unwrap();
        let sq = g.square(r);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap().for_params(&g, &store);
        assert!((grads[0].item() - gw).abs() < 1e-12);
        assert!((grads[1].item() - gb).abs() < 1e-12);
    }

    #[test]
    fn probes_across_a_kink_are_skipped() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(1, 2, vec![3e-6, 0.5]));
        let loss = |s: &ParamStore| {
            let mut g = Graph::new();
            let v = g.param(s, w);
            let a = g.abs(v);
            let l = g.sum(a);
            Probe {
                value: g.value(l).item(),
                kinks: g.kink_pattern(),
            }
        };
        let analytic = [Tensor::from_vec(1, 2, vec![1.0, 1.0])];
        let report = finite_diff_check(&store, &analytic, FdOptions::new(1e-5), loss);
        assert_eq!((report.checked, report.skipped_kinks), (1, 1));
        assert!(report.max_rel_error < 1e-10);
    }

    #[test]
    fn zero_parameter_model_gives_empty_report() {
        let report = finite_diff_check(&ParamStore::new(), &[], FdOptions::new(1e-5), |_| 1.0);
        assert!(report.is_empty());
        assert_eq!(report.max_rel_error, 0.0);
    }
}
