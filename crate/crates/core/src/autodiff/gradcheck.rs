//! Central finite differences for checking backward rules.

use super::{Gradients, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference norm when both
/// gradients are (numerically) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error between tape gradients and central differences of a
/// scalar function of several tensor inputs.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.gradients(loss)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut failure = None;
        let numeric = central_difference(
            |x| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let v = if j == k {
                            Tensor::new(input.shape(), x.to_vec()).expect("same shape")
                        } else {
                            v.clone()
                        };
                        t.constant(v)
                    })
                    .collect();
                match build(&mut t, &vs) {
                    Ok(l) => t.value(l).item(),
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            input.data(),
            step,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Per-parameter relative error between backward gradients and central
/// differences of `loss(store)`.
pub fn check_params<F>(store: &ParamStore, step: f64, loss: F) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    let mut grads = Gradients::zeros_like(store);
    tape.backward(l, &mut grads)?;
    let mut out = Vec::with_capacity(store.len());
    let mut probe = store.clone();
    for id in store.ids() {
        let base = store.get(id).clone();
        let mut failure = None;
        let numeric = central_difference(
            |x| {
                probe.get_mut(id).data_mut().copy_from_slice(x);
                let mut t = Tape::new();
                match loss(&mut t, &probe) {
                    Ok(v) => t.value(v).item(),
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            base.data(),
            step,
        );
        probe.get_mut(id).data_mut().copy_from_slice(base.data());
        if let Some(e) = failure {
            return Err(e);
        }
        out.push((
            store.name(id).to_string(),
            relative_error(grads.get(id).data(), &numeric),
        ));
    }
    Ok(out)
}
