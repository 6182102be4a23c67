use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, ParamStore, Tensor};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize, init_seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            hidden_activation: Activation::Relu,
            init_seed,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    pub fn is_valid(&self) -> bool {
        self.dims().iter().all(|&d| d >= 1)
    }
}

/// Fully-connected network layout whose weights live in a [`ParamStore`]
/// under `"{prefix}.l{i}.w"` / `"{prefix}.l{i}.b"`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    prefix: String,
    dims: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    pub fn new(prefix: &str, spec: &MlpSpec) -> Self {
        assert!(spec.is_valid(), "MLP dimensions must be ≥ 1: {spec:?}");
        Self {
            prefix: prefix.to_string(),
            dims: spec.dims(),
            activation: spec.hidden_activation,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{}.w", self.prefix, layer)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{}.b", self.prefix, layer)
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.layers())
            .flat_map(|l| [self.weight_name(l), self.bias_name(l)])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn init<T: Real>(&self, seed: u64) -> Vec<(String, Tensor<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(2 * self.layers());
        for (l, w) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-limit..limit)))
                .collect();
            out.push((self.weight_name(l), Tensor::matrix(fan_in, fan_out, data)));
            out.push((
                self.bias_name(l),
                Tensor::new(vec![fan_out], vec![T::zero(); fan_out]).expect("bias"),
            ));
        }
        out
    }

    /// Single-row forward pass without building a graph.
    pub fn forward_row<T: Real>(&self, store: &ParamStore<T>, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.input_dim(), "{}: input width", self.prefix);
        let mut h = x.to_vec();
        for l in 0..self.layers() {
            let w = store.expect(&self.weight_name(l));
            let b = store.expect(&self.bias_name(l));
            let out_dim = self.dims[l + 1];
            let mut next = b.data().to_vec();
            for (i, hi) in h.iter().enumerate() {
                if *hi == T::zero() {
                    continue;
                }
                let row = &w.data()[i * out_dim..(i + 1) * out_dim];
                for (n, wv) in next.iter_mut().zip(row) {
                    *n = *n + *hi * *wv;
                }
            }
            if l + 1 < self.layers() {
                for v in next.iter_mut() {
                    *v = match self.activation {
                        Activation::Relu => v.max(T::zero()),
                        Activation::Tanh => v.tanh(),
                    };
                }
            }
            h = next;
        }
        h
    }

    /// Append the network to `g`. With `trainable = false` the weights enter
    /// as constants and receive no gradient.
    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        trainable: bool,
    ) -> NodeId {
        let mut h = x;
        for l in 0..self.layers() {
            let (wn, bn) = (self.weight_name(l), self.bias_name(l));
            let (w, b) = if trainable {
                (g.param(&wn, store.expect(&wn)), g.param(&bn, store.expect(&bn)))
            } else {
                (g.frozen(&wn, store.expect(&wn)), g.frozen(&bn, store.expect(&bn)))
            };
            let z = g.matmul(h, w);
            h = g.add(z, b);
            if l + 1 < self.layers() {
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
            }
        }
        h
    }
}

/// Stand-alone graph for `spec`: input `"x"` (rows × input_dim), output `"y"`,
/// parameters named `"mlp.l{i}.{w,b}"` initialised from `spec.init_seed`.
pub fn mlp_build<T: Real>(spec: &MlpSpec) -> Graph<T> {
    let mlp = Mlp::new("mlp", spec);
    let mut store = ParamStore::new();
    store.extend(mlp.init::<T>(spec.init_seed));
    let mut g = Graph::new();
    let x = g.input("x");
    let y = mlp.apply(&mut g, &store, x, true);
    g.set_output("y", y);
    g
}
