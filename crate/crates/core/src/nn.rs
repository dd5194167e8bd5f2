//! Small dense building blocks shared by the models.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, ParamVars, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Uniform Glorot initialisation with the given fan-in and fan-out.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// `y = x W + b` over the last axis, with `W` stored `[in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = glorot(&[in_features, out_features], in_features, out_features, rng);
        let weight = store.add(format!("{name}.weight"), w);
        let bias =
            with_bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_features])));
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    /// Applies the layer to the last axis of `x` (any rank ≥ 1).
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.last() != Some(&self.in_features) {
            return Err(shape_err(format!(
                "linear layer expects last axis {}, got {:?}",
                self.in_features, shape
            )));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = tape.reshape(x, &[rows, self.in_features])?;
        let mut y = tape.matmul(flat, vars.get(self.weight))?;
        if let Some(b) = self.bias {
            y = tape.add(y, vars.get(b))?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.out_features;
        tape.reshape(y, &out_shape)
    }
}

/// Feed-forward stack with tanh between layers and a linear final layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Widths `[in, hidden..., out]`.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, vars, h)?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_on_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 3, 2, true, &mut rng);
        store
            .set(
                lin.bias.unwrap(),
                Tensor::new(&[2], vec![1.0, -1.0]).unwrap(),
            )
            .unwrap();
        let mut tape = Tape::new();
        let vars = tape.bind(&store);
        let x = tape.constant(Tensor::from_fn(&[2, 4, 3], |i| i as f64));
        let y = lin.forward(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 2]);
        let w = store.get(lin.weight);
        let expect: f64 = (0..3).map(|i| (21 + i) as f64 * w.at(&[i, 1])).sum::<f64>() - 1.0;
        assert!((tape.value(y).at(&[1, 3, 1]) - expect).abs() < 1e-12);
    }

    #[test]
    fn mlp_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 48, 48, 1], &mut rng);
        assert_eq!(mlp.layers.len(), 4);
        assert_eq!(store.len(), 8);
    }
}
