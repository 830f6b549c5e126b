//! Dense MLP with exponential-linear activations, manual batched
//! forward/backward passes, and an Adam optimizer over flattened parameters.
//!
//! Batches are column-major: an input matrix has shape `(in_dim, batch)`.

use super::Real;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// One dense layer; weights are `(out, in)`.
#[derive(Clone, Debug)]
pub struct Dense<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

/// Multilayer perceptron. The exponential-linear activation is applied after
/// every layer except the last.
#[derive(Clone, Debug)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

/// Per-layer parameter gradients.
#[derive(Clone, Debug)]
pub struct MlpGrads<F> {
    pub w: Vec<Array2<F>>,
    pub b: Vec<Array1<F>>,
}

/// Activations cached by a forward pass for the backward pass.
pub struct ForwardCache<F> {
    /// Input of each layer (the network input first).
    inputs: Vec<Array2<F>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<F>>,
}

fn elu<F: Real>(z: F) -> F {
    if z > F::zero() {
        z
    } else {
        z.exp() - F::one()
    }
}

fn elu_grad<F: Real>(z: F) -> F {
    if z > F::zero() {
        F::one()
    } else {
        z.exp()
    }
}

impl<F: Real> Mlp<F> {
    /// Builds a network with the given layer sizes, e.g. `[116, 512, 512,
    /// 512, 12]`. Weights and biases start uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; the final layer is scaled by
    /// `final_gain` so fresh policies act near zero.
    pub fn new<R: Rng>(dims: &[usize], final_gain: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let gain = if l == dims.len() - 2 { final_gain } else { 1.0 };
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                F::from_f64(gain * rng.gen_range(-bound..bound))
            });
            let b = Array1::from_shape_fn(fan_out, |_| {
                F::from_f64(gain * rng.gen_range(-bound..bound))
            });
            layers.push(Dense { w, b });
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    /// Batched forward pass; `x` is `(in_dim, batch)`.
    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        self.forward_cached(x).0
    }

    /// Forward pass that also returns the cache for [`Self::backward`].
    pub fn forward_cached(&self, x: &Array2<F>) -> (Array2<F>, ForwardCache<F>) {
        assert_eq!(x.nrows(), self.input_dim(), "mlp input dimension mismatch");
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(a.clone());
            let mut z = layer.w.dot(&a);
            for mut col in z.axis_iter_mut(Axis(1)) {
                col += &layer.b;
            }
            if l < last {
                pre.push(z.clone());
                z.mapv_inplace(elu);
            }
            a = z;
        }
        (a, ForwardCache { inputs, pre })
    }

    /// Backpropagates `dl_dout` (same shape as the output) through the
    /// cached pass and returns parameter gradients.
    pub fn backward(&self, cache: &ForwardCache<F>, dl_dout: &Array2<F>) -> MlpGrads<F> {
        let last = self.layers.len() - 1;
        let mut dw = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut db = vec![Array1::zeros(0); self.layers.len()];
        let mut delta = dl_dout.clone();
        for l in (0..self.layers.len()).rev() {
            // The last layer is linear; hidden layers fold in the
            // activation derivative.
            if l < last {
                let mut gated = delta;
                ndarray::Zip::from(&mut gated)
                    .and(&cache.pre[l])
                    .for_each(|d, &z| *d = *d * elu_grad(z));
                delta = gated;
            }
            dw[l] = delta.dot(&cache.inputs[l].t());
            db[l] = delta.sum_axis(Axis(1));
            if l > 0 {
                delta = self.layers[l].w.t().dot(&delta);
            }
        }
        MlpGrads { w: dw, b: db }
    }

    pub fn zero_grads(&self) -> MlpGrads<F> {
        MlpGrads {
            w: self.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            b: self.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattens parameters layer by layer, weights then bias.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[F]) {
        assert_eq!(flat.len(), self.param_count());
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[k];
                k += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }
}

impl<F: Real> MlpGrads<F> {
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn add(&mut self, other: &MlpGrads<F>) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One Adam step; moments are kept in f64 regardless of the network
    /// scalar type.
    pub fn step<F: Real>(&mut self, params: &mut [F], grads: &[F], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i].into_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let delta = lr * mhat / (vhat.sqrt() + self.eps);
            params[i] = F::from_f64(params[i].into_f64() - delta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_network_outputs_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net: Mlp<f64> = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        for l in &mut net.layers {
            l.w.fill(0.0);
        }
        net.layers[0].b.fill(0.2);
        net.layers[1].b = ndarray::arr1(&[0.5, -0.7]);
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i + j) as f64);
        let y = net.forward(&x);
        // Hidden bias 0.2 passes elu (positive), last layer weights zero.
        for col in y.axis_iter(Axis(1)) {
            assert!((col[0] - 0.5).abs() < 1e-12);
            assert!((col[1] + 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net: Mlp<f64> = Mlp::new(&[6, 16, 16, 3], 1.0, &mut rng);
        let x = Array2::from_shape_fn((6, 2), |(i, _)| i as f64 * 0.3 - 1.0);
        let y = net.forward(&x);
        for i in 0..3 {
            assert_eq!(y[(i, 0)], y[(i, 1)]);
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_scalar_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net: Mlp<f64> = Mlp::new(&[2, 8, 2], 1.0, &mut rng);
        let x = Array2::from_shape_fn((2, 4), |(i, j)| 0.3 * (i as f64 + 1.0) - 0.2 * j as f64);
        // Loss: mean of squared outputs.
        let loss = |net: &Mlp<f64>| -> f64 {
            let y = net.forward(&x);
            y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64
        };
        let (y, cache) = net.forward_cached(&x);
        let dl_dout = y.mapv(|v| 2.0 * v / y.len() as f64);
        let grads = net.backward(&cache, &dl_dout).flatten();

        let h = 1e-6;
        let mut flat = net.flatten();
        for k in 0..flat.len() {
            let orig = flat[k];
            flat[k] = orig + h;
            net.unflatten(&flat);
            let up = loss(&net);
            flat[k] = orig - h;
            net.unflatten(&flat);
            let down = loss(&net);
            flat[k] = orig;
            net.unflatten(&flat);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grads[k]).abs() <= 1e-7 + 1e-5 * fd.abs(),
                "param {k}: fd {fd} vs analytic {}",
                grads[k]
            );
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: Mlp<f32> = Mlp::new(&[4, 8, 3], 1.0, &mut rng);
        let flat = net.flatten();
        let mut other: Mlp<f32> = Mlp::new(&[4, 8, 3], 1.0, &mut rng);
        other.unflatten(&flat);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f32 * 0.1);
        assert_eq!(net.forward(&x), other.forward(&x));
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut adam = AdamState::new(2);
        let mut params = vec![3.0f64, -2.0];
        for _ in 0..2000 {
            let grads = vec![2.0 * params[0], 2.0 * params[1]];
            adam.step(&mut params, &grads, 1e-2);
        }
        assert!(params[0].abs() < 1e-3 && params[1].abs() < 1e-3, "{params:?}");
    }
}
