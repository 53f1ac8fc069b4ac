//! Multilayer perceptrons stored in a [`ParamStore`] under `<prefix>.w{i}` / `<prefix>.b{i}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Negative-side slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Layer widths `[in, hidden.., out]` under a parameter prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub prefix: String,
    pub sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, sizes: &[usize]) -> Self {
        MlpSpec {
            prefix: prefix.into(),
            sizes: sizes.to_vec(),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty spec")
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    /// Uniform fan-in initialisation, zero biases. The last layer is
    /// additionally multiplied by `last_scale`.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
        last_scale: f64,
    ) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::config(format!(
                "mlp `{}` needs at least two non-zero widths, got {:?}",
                self.prefix, self.sizes
            )));
        }
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l + 1 == self.n_layers() {
                bound *= last_scale;
            }
            store.insert(
                self.weight_name(l),
                Tensor::uniform(&[fan_in, fan_out], bound, rng),
            )?;
            store.insert(self.bias_name(l), Tensor::zeros(&[1, fan_out]))?;
        }
        Ok(())
    }

    fn check<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        for l in 0..self.n_layers() {
            let w = store.get(&self.weight_name(l))?;
            let b = store.get(&self.bias_name(l))?;
            if w.shape() != [self.sizes[l], self.sizes[l + 1]] || b.len() != self.sizes[l + 1] {
                return Err(Error::config(format!(
                    "mlp `{}` layer {l}: expected {}x{}, found weight {:?} bias {:?}",
                    self.prefix,
                    self.sizes[l],
                    self.sizes[l + 1],
                    w.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Affine + leaky-ReLU per hidden layer, final layer linear.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        self.check(store)?;
        if tape.value(x).cols() != self.input_dim() {
            return Err(Error::config(format!(
                "mlp `{}` expects {} input features, got {}",
                self.prefix,
                self.input_dim(),
                tape.value(x).cols()
            )));
        }
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut h = x;
        for l in 0..self.n_layers() {
            let w = tape.param(store, &self.weight_name(l))?;
            let b = tape.param(store, &self.bias_name(l))?;
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if l + 1 < self.n_layers() {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(h)
    }
}

/// Untraced forward pass.
pub fn mlp_forward<T: Scalar>(
    store: &ParamStore<T>,
    spec: &MlpSpec,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = spec.forward(&mut tape, store, xv)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new("m", &[3, 5, 2]);
        let mut store = ParamStore::<f64>::new();
        spec.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), 1.0)
            .unwrap();
        for name in store.names().map(str::to_owned).collect::<Vec<_>>() {
            store
                .get_mut(&name)
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let x = Tensor::uniform(&[4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let y = mlp_forward(&store, &spec, &x).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_is_affine() {
        let spec = MlpSpec::new("lin", &[3, 2]);
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        spec.init(&mut store, &mut rng, 1.0).unwrap();
        *store.get_mut("lin.b0").unwrap() = Tensor::new(&[1, 2], vec![0.5, -1.0]).unwrap();
        let x = Tensor::uniform(&[4, 3], 2.0, &mut rng);
        let y = mlp_forward(&store, &spec, &x).unwrap();
        let mut expected = x.matmul(store.get("lin.w0").unwrap()).unwrap();
        for i in 0..4 {
            expected.row_mut(i)[0] += 0.5;
            expected.row_mut(i)[1] -= 1.0;
        }
        assert_eq!(y, expected);
    }

    #[test]
    fn missing_param_is_config_error() {
        let spec = MlpSpec::new("m", &[2, 2]);
        let store = ParamStore::<f64>::new();
        let x = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            mlp_forward(&store, &spec, &x),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = MlpSpec::new("m", &[3, 6, 6, 2]);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            spec.init(&mut store, &mut rng, 1.0).unwrap();
            for name in ["m.b0", "m.b1", "m.b2"] {
                *store.get_mut(name).unwrap() =
                    Tensor::uniform(store.get(name).unwrap().shape(), 0.5, &mut rng);
            }
            let x = Tensor::uniform(&[5, 3], 1.0, &mut rng);
            let report = check_gradients(&store, 1e-5, |tape, store| {
                let xv = tape.constant(x.clone());
                let y = spec.forward(tape, store, xv)?;
                Ok(tape.sum_all(y))
            })
            .unwrap();
            for e in &report.entries {
                assert!(
                    e.relative_error() < 1e-6,
                    "{}: {}",
                    e.name,
                    e.relative_error()
                );
            }
        }
    }
}
