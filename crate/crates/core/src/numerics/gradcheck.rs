//! Central finite-difference oracle for tape gradients (64-bit only).

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Analytic and numeric gradients for one parameter.
#[derive(Debug, Clone)]
pub struct GradEntry {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradEntry {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`; zero when both vanish.
    pub fn relative_error(&self) -> f64 {
        let diff = norm(self.analytic.iter().zip(&self.numeric).map(|(a, n)| a - n));
        let scale = norm(self.analytic.iter().copied()).max(norm(self.numeric.iter().copied()));
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    /// Largest `|a − n| / max(|a|, |n|, floor)` over the entries.
    pub fn max_elementwise_error(&self, floor: f64) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    pub fn analytic_norm(&self) -> f64 {
        norm(self.analytic.iter().copied())
    }
}

fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub entries: Vec<GradEntry>,
}

impl GradCheck {
    pub fn worst_group(&self) -> Option<(&str, f64)> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), e.relative_error()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn assert_elementwise(&self, tol: f64, floor: f64) {
        for e in &self.entries {
            let err = e.max_elementwise_error(floor);
            assert!(
                err < tol,
                "gradient mismatch for `{}`: {err:e} (analytic {:?}, numeric {:?})",
                e.name,
                e.analytic,
                e.numeric
            );
        }
    }
}

/// Compares tape gradients of `loss_fn` against central differences with step `h`
/// for every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore<f64>, h: f64, loss_fn: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    check_gradients_for(store, &names, h, loss_fn)
}

/// As [`check_gradients`], restricted to `names`.
pub fn check_gradients_for<F>(
    store: &ParamStore<f64>,
    names: &[String],
    h: f64,
    loss_fn: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, &analytic_store)?;
    tape.backward(loss, &mut analytic_store)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, s)?;
        Ok(tape.value(l).data()[0])
    };

    let mut probe = store.clone();
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let n = store.get(name)?.len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        entries.push(GradEntry {
            name: name.clone(),
            analytic: analytic_store.grad(name)?.data().to_vec(),
            numeric,
        });
    }
    Ok(GradCheck { entries })
}

/// Finite-difference gradient of a plain function of one tensor.
pub fn numeric_gradient(x: &Tensor<f64>, h: f64, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}
