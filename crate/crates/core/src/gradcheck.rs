//! Finite-difference check of the full encoder + head + loss stack on a tiny
//! network. Used by the `gradcheck` CLI subcommand and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{head_graph, time_fraction, HeadKind, HeadParams};
use crate::model::weighted_l1_graph;
use crate::nn::{finite_diff_check, BiLstmParams, FdOptions, GradCheckReport, Graph, ParamId, ParamStore, Probe, Tensor};
use crate::pose::{build_masked_sequence, prev_next, MotionSequence};
use crate::schedule::{Provenance, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub frames: usize,
    pub batch: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub head: HeadKind,
    pub step: f64,
    pub tolerance: f64,
    /// Gradients below this magnitude are compared on an absolute scale.
    /// At step 1e-5 and a loss of order one, roundoff limits central
    /// differences to roughly 1e-10 absolute accuracy.
    pub floor: f64,
}

impl GradcheckConfig {
    /// D=4, N=8, h=8, one layer, AIS head.
    pub fn tiny() -> Self {
        GradcheckConfig {
            dim: 4,
            frames: 8,
            batch: 1,
            hidden_size: 8,
            num_layers: 1,
            head: HeadKind::Ais,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }

    /// Named presets: `tiny`, and `tiny-<head>` for any head kind.
    pub fn preset(name: &str) -> Result<Self> {
        if name == "tiny" {
            return Ok(Self::tiny());
        }
        match name.strip_prefix("tiny-") {
            Some(head) => Ok(GradcheckConfig {
                head: HeadKind::parse(head)?,
                ..Self::tiny()
            }),
            None => Err(Error::Config(format!("unknown gradcheck preset `{name}`"))),
        }
    }
}

struct Problem {
    store: ParamStore,
    encoder: BiLstmParams,
    head: HeadParams,
    sigma: ParamId,
    input: Tensor,
    prev: Tensor,
    next: Tensor,
    fixed: Tensor,
    target: Tensor,
    steps: usize,
    batch: usize,
}

impl Problem {
    fn build(cfg: &GradcheckConfig, seed: u64) -> Result<Self> {
        if cfg.dim == 0 || cfg.frames < 3 || cfg.batch == 0 {
            return Err(Error::Config("gradcheck needs D >= 1, N >= 3 and a non-empty batch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, n, b) = (cfg.dim, cfg.frames, cfg.batch);
        let mut store = ParamStore::new();
        let encoder = BiLstmParams::init(&mut store, d + 1, cfg.hidden_size, cfg.num_layers, &mut rng);
        let head = HeadParams::init(&mut store, cfg.head, encoder.output_size(), d, &mut rng);
        let sigma_vals: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
        let sigma = store.add("loss.sigma", Tensor::from_vec(1, d, sigma_vals));

        let rows = n * b;
        let mut input = Tensor::zeros(rows, d + 1);
        let mut prev = Tensor::zeros(rows, d);
        let mut next = Tensor::zeros(rows, d);
        let mut fixed = Tensor::zeros(rows, d);
        let mut target = Tensor::zeros(rows, d);
        for bi in 0..b {
            let frames: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let seq = MotionSequence::from_flat(frames, n, d, Vec::new(), 0, 24.0)?;
            let mid = rng.random_range(1..n - 1);
            let sched = Schedule::new(vec![0, mid, n - 1], n, Provenance::User)?;
            let masked = build_masked_sequence(&seq, &sched)?;
            for t in 0..n {
                let row = t * b + bi;
                let (l, r) = prev_next(&sched, t);
                let u = time_fraction(t, l, r);
                input.data_mut()[row * (d + 1)..(row + 1) * (d + 1)].copy_from_slice(masked.row(t));
                for c in 0..d {
                    let (pl, pr) = (seq.frame(l)[c], seq.frame(r)[c]);
                    prev.data_mut()[row * d + c] = pl;
                    next.data_mut()[row * d + c] = pr;
                    // Offset heads only read this as a constant; a plain lerp
                    // is enough for a width that has no rotation layout.
                    fixed.data_mut()[row * d + c] = pl + u * (pr - pl);
                    target.data_mut()[row * d + c] = seq.frame(t)[c];
                }
            }
        }
        Ok(Problem {
            store,
            encoder,
            head,
            sigma,
            input,
            prev,
            next,
            fixed,
            target,
            steps: n,
            batch: b,
        })
    }

    fn loss(&self, store: &ParamStore) -> Result<(Graph, crate::nn::Var)> {
        let mut g = Graph::new();
        let x = g.constant(self.input.clone());
        let hidden = self.encoder.forward_graph(&mut g, store, x, self.steps, self.batch)?;
        let prev = g.constant(self.prev.clone());
        let next = g.constant(self.next.clone());
        let fixed = self.head.kind.fixed_interp().map(|_| g.constant(self.fixed.clone()));
        let vars = head_graph(&mut g, store, &self.head, hidden, prev, next, fixed)?;
        let target = g.constant(self.target.clone());
        let sigma = g.param(store, self.sigma);
        let loss = weighted_l1_graph(&mut g, vars.pred, target, sigma, self.steps * self.batch)?;
        Ok((g, loss))
    }
}

/// Compares tape gradients of the training loss with central differences for
/// every parameter scalar. Scalars whose probes cross a ReLU or absolute
/// value kink are skipped and counted in the report.
pub fn run_gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradCheckReport> {
    let problem = Problem::build(cfg, seed)?;
    let (g, loss) = problem.loss(&problem.store)?;
    let analytic = g.backward(loss)?.for_params(&g, &problem.store);
    let mut failure = None;
    let opts = FdOptions {
        step: cfg.step,
        floor: cfg.floor,
    };
    let report = finite_diff_check(&problem.store, &analytic, opts, |s| match problem.loss(s) {
        Ok((g, l)) => Probe {
            value: g.value(l).item(),
            kinks: g.kink_pattern(),
        },
        Err(e) => {
            failure.get_or_insert(e);
            Probe::from(f64::NAN)
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
