//! Dense MLPs and the bidirectional multi-layer LSTM encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`
    pub weight: ParamId,
    /// `1 x out`
    pub bias: ParamId,
}

/// Feed-forward stack: ReLU between layers, `output` on the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

impl MlpParams {
    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        output: OutputActivation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weight: store.add(format!("{prefix}.{i}.weight"), uniform(rng, w[0], w[1], bound)),
                    bias: store.add(format!("{prefix}.{i}.bias"), Tensor::zeros(1, w[1])),
                }
            })
            .collect();
        MlpParams {
            sizes: sizes.to_vec(),
            layers,
            output,
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    /// Batched forward on the tape: `x` is `rows x input_size`.
    pub fn forward_graph(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.shape(x)[1] != self.input_size() {
            return Err(Error::Shape(format!(
                "MLP expects width {}, got {}",
                self.input_size(),
                g.shape(x)[1]
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(store, layer.weight);
            let b = g.param(store, layer.bias);
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            h = if i < last {
                g.relu(z)
            } else {
                match self.output {
                    OutputActivation::Linear => z,
                    OutputActivation::Logistic => g.sigmoid(z),
                }
            };
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

/// Single-vector forward without a tape.
pub fn mlp_forward(x: &[f64], store: &ParamStore, params: &MlpParams) -> Result<Vec<f64>> {
    if x.len() != params.input_size() {
        return Err(Error::Shape(format!(
            "MLP expects width {}, got {}",
            params.input_size(),
            x.len()
        )));
    }
    let mut h = x.to_vec();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let w = store.get(layer.weight);
        let b = store.get(layer.bias);
        let mut z = b.data().to_vec();
        for (r, &hv) in h.iter().enumerate() {
            for (zc, wv) in z.iter_mut().zip(w.row(r)) {
                *zc += hv * wv;
            }
        }
        if i < last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        } else if params.output == OutputActivation::Logistic {
            z.iter_mut().for_each(|v| *v = logistic(*v));
        }
        h = z;
    }
    Ok(h)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One LSTM direction. Gate column blocks are ordered input, forget, cell,
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirection {
    /// `input x 4h`
    pub w_ih: ParamId,
    /// `h x 4h`
    pub w_hh: ParamId,
    /// `1 x 4h`
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Per layer: `[forward, backward]`.
    pub layers: Vec<[LstmDirection; 2]>,
}

impl BiLstmParams {
    /// Uniform `+-1/sqrt(fan_in)` weights; forget-gate bias 1, others 0.
    pub fn init(
        store: &mut ParamStore,
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let h = hidden_size;
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let in_size = if l == 0 { input_size } else { 2 * h };
            let mut make = |dir: &str| {
                let w_ih = store.add(
                    format!("encoder.{l}.{dir}.w_ih"),
                    uniform(rng, in_size, 4 * h, 1.0 / (in_size as f64).sqrt()),
                );
                let w_hh = store.add(
                    format!("encoder.{l}.{dir}.w_hh"),
                    uniform(rng, h, 4 * h, 1.0 / (h as f64).sqrt()),
                );
                let mut bias = Tensor::zeros(1, 4 * h);
                bias.data_mut()[h..2 * h].fill(1.0);
                let bias = store.add(format!("encoder.{l}.{dir}.bias"), bias);
                LstmDirection { w_ih, w_hh, bias }
            };
            let fwd = make("fwd");
            let bwd = make("bwd");
            layers.push([fwd, bwd]);
        }
        BiLstmParams {
            input_size,
            hidden_size,
            layers,
        }
    }

    /// Output width `H = 2h`.
    pub fn output_size(&self) -> usize {
        2 * self.hidden_size
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Encodes `batch` sequences of `steps` frames. `x` is
    /// `(steps * batch) x input` in time-major row order (row `t * batch + b`);
    /// the result is `(steps * batch) x 2h` in the same order. Initial hidden
    /// and cell states are zero.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        steps: usize,
        batch: usize,
    ) -> Result<Var> {
        let [rows, width] = g.shape(x);
        if width != self.input_size || rows != steps * batch {
            return Err(Error::Shape(format!(
                "encoder expects {} x {}, got {rows} x {width}",
                steps * batch,
                self.input_size
            )));
        }
        let mut input = x;
        for layer in &self.layers {
            let fwd = self.direction(g, store, &layer[0], input, steps, batch, false)?;
            let bwd = self.direction(g, store, &layer[1], input, steps, batch, true)?;
            let f = g.concat_rows(&fwd)?;
            let b = g.concat_rows(&bwd)?;
            input = g.concat_cols(&[f, b])?;
        }
        Ok(input)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        dir: &LstmDirection,
        input: Var,
        steps: usize,
        batch: usize,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let h = self.hidden_size;
        let w_ih = g.param(store, dir.w_ih);
        let w_hh = g.param(store, dir.w_hh);
        let bias = g.param(store, dir.bias);
        let proj = g.matmul(input, w_ih)?;
        let proj = g.add_row(proj, bias)?;
        let mut outputs: Vec<Option<Var>> = vec![None; steps];
        let mut state: Option<(Var, Var)> = None;
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let mut gates = g.slice_rows(proj, t * batch, (t + 1) * batch)?;
            if let Some((h_prev, _)) = state {
                let rec = g.matmul(h_prev, w_hh)?;
                gates = g.add(gates, rec)?;
            }
            let i_pre = g.slice_cols(gates, 0, h)?;
            let f_pre = g.slice_cols(gates, h, 2 * h)?;
            let c_pre = g.slice_cols(gates, 2 * h, 3 * h)?;
            let o_pre = g.slice_cols(gates, 3 * h, 4 * h)?;
            let i_gate = g.sigmoid(i_pre);
            let cand = g.tanh(c_pre);
            let o_gate = g.sigmoid(o_pre);
            let ic = g.mul(i_gate, cand)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let f_gate = g.sigmoid(f_pre);
                    let fc = g.mul(f_gate, c_prev)?;
                    g.add(fc, ic)?
                }
                None => ic,
            };
            let c_act = g.tanh(c);
            let h_t = g.mul(o_gate, c_act)?;
            outputs[t] = Some(h_t);
            state = Some((h_t, c));
        }
        Ok(outputs.into_iter().map(|o| o.expect("every step visited")).collect())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| l.iter().flat_map(|d| [d.w_ih, d.w_hh, d.bias]))
            .collect()
    }
}

/// Encodes one sequence of `rows x input` values and returns `rows x 2h`.
pub fn bilstm_forward(input: &Tensor, store: &ParamStore, params: &BiLstmParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let out = params.forward_graph(&mut g, store, x, input.rows(), 1)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_store(store: &mut ParamStore) {
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = BiLstmParams::init(&mut store, 3, 4, 2, &mut rng);
        zero_store(&mut store);
        let x = Tensor::from_vec(5, 3, (0..15).map(|v| v as f64 * 0.1).collect());
        let h = bilstm_forward(&x, &store, &p).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = BiLstmParams::init(&mut store, 5, 16, 2, &mut rng);
        let x = Tensor::from_vec(7, 5, (0..35).map(|v| (v as f64 * 0.37).sin()).collect());
        let a = bilstm_forward(&x, &store, &p).unwrap();
        let b = bilstm_forward(&x, &store, &p).unwrap();
        assert_eq!(a.shape(), [7, 32]);
        assert_eq!(a, b);
        let wrong = Tensor::zeros(7, 4);
        assert!(matches!(bilstm_forward(&wrong, &store, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn mlp_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let logistic = MlpParams::init(&mut store, "a", &[3, 4, 2], OutputActivation::Logistic, &mut rng);
        let linear = MlpParams::init(&mut store, "b", &[3, 4, 2], OutputActivation::Linear, &mut rng);
        zero_store(&mut store);
        assert_eq!(mlp_forward(&[0.0; 3], &store, &logistic).unwrap(), vec![0.5, 0.5]);
        assert_eq!(mlp_forward(&[0.0; 3], &store, &linear).unwrap(), vec![0.0, 0.0]);
        assert!(mlp_forward(&[0.0; 2], &store, &linear).is_err());
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let mlp = MlpParams::init(&mut store, "l", &[2, 2], OutputActivation::Linear, &mut rng);
        *store.get_mut(mlp.layers[0].weight) = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        *store.get_mut(mlp.layers[0].bias) = Tensor::row_vector(vec![0.5, -1.0]);
        // [1, -1] @ [[1, 2], [3, 4]] + [0.5, -1] = [-2, -2] + [0.5, -1]
        assert_eq!(mlp_forward(&[1.0, -1.0], &store, &mlp).unwrap(), vec![-1.5, -3.0]);
    }

    #[test]
    fn graph_and_plain_mlp_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mlp = MlpParams::init(&mut store, "m", &[4, 6, 3], OutputActivation::Logistic, &mut rng);
        let x = Tensor::from_vec(2, 4, vec![0.1, -0.2, 0.3, 0.9, -1.0, 0.5, 0.25, 0.0]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = mlp.forward_graph(&mut g, &store, xv).unwrap();
        for r in 0..2 {
            let plain = mlp_forward(x.row(r), &store, &mlp).unwrap();
            for (a, b) in plain.iter().zip(g.value(out).row(r)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    /// Reversing time and swapping the direction parameters mirrors the
    /// output tracks.
    #[test]
    fn reversal_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let p = BiLstmParams::init(&mut store, 3, 4, 1, &mut rng);
        let swapped = BiLstmParams {
            layers: vec![[p.layers[0][1].clone(), p.layers[0][0].clone()]],
            ..p.clone()
        };
        let n = 6;
        let x = Tensor::from_vec(n, 3, (0..n * 3).map(|v| ((v * 7) as f64 * 0.13).cos()).collect());
        let mut rev = Vec::new();
        for t in (0..n).rev() {
            rev.extend_from_slice(x.row(t));
        }
        let xr = Tensor::from_vec(n, 3, rev);
        let a = bilstm_forward(&x, &store, &p).unwrap();
        let b = bilstm_forward(&xr, &store, &swapped).unwrap();
        for t in 0..n {
            let ar = a.row(t);
            let br = b.row(n - 1 - t);
            for k in 0..4 {
                assert!((ar[k] - br[4 + k]).abs() < 1e-14);
                assert!((ar[4 + k] - br[k]).abs() < 1e-14);
            }
        }
    }
}
