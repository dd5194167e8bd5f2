//! Chebyshev spectral graph convolution.
//!
//! For a multivariate signal `x` of shape `[N, f_in]` and weights
//! `W[K, f_out, f_in]`, output feature `j` is
//! `sum_k sum_i W[k, j, i] * T_k(L~) x[:, i]`, with `T_k` from the
//! three-term recursion `T_0 = I`, `T_1 = L~`, `T_k = 2 L~ T_{k-1} - T_{k-2}`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ScaledLaplacian;
use crate::autodiff::{ParamId, ParamStore, SparsePattern, Tape, Tensor, Var};
use crate::error::{invalid, shape_err, Result};

/// A scaled Laplacian whose values live on a tape (possibly as a parameter).
#[derive(Clone, Debug)]
pub struct TapeLaplacian {
    pub pattern: Arc<SparsePattern>,
    pub values: Var,
}

impl TapeLaplacian {
    pub fn constant(tape: &mut Tape, lap: &ScaledLaplacian) -> Self {
        let values =
            tape.constant(Tensor::new(&[lap.values().len()], lap.values().to_vec()).expect("1-d"));
        Self {
            pattern: Arc::clone(lap.pattern()),
            values,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.pattern.n_rows()
    }
}

/// Stacks `[T_0 x, ..., T_{K-1} x]` into a `[K, N, f]` tensor.
pub fn cheb_basis(tape: &mut Tape, lap: &TapeLaplacian, x: Var, order: usize) -> Result<Var> {
    if order == 0 {
        return Err(invalid("Chebyshev order must be at least 1"));
    }
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != lap.n_nodes() {
        return Err(shape_err(format!(
            "graph signal {:?} on a {}-node Laplacian",
            shape,
            lap.n_nodes()
        )));
    }
    let mut terms = Vec::with_capacity(order);
    terms.push(x);
    if order > 1 {
        terms.push(tape.sparse_dense_matmul(&lap.pattern, lap.values, x)?);
    }
    for k in 2..order {
        let lt = tape.sparse_dense_matmul(&lap.pattern, lap.values, terms[k - 1])?;
        let twice = tape.scale(lt, 2.0);
        terms.push(tape.sub(twice, terms[k - 2])?);
    }
    let stacked: Vec<Var> = terms
        .into_iter()
        .map(|t| tape.reshape(t, &[1, shape[0], shape[1]]))
        .collect::<Result<_>>()?;
    tape.concat(&stacked, 0)
}

/// Rearranges `W[K, f_out, f_in]` into the `[K * f_in, f_out]` matrix that
/// multiplies a `[rows, K * f_in]` basis.
pub fn weight_matrix(tape: &mut Tape, weight: Var) -> Result<Var> {
    let s = tape.shape(weight).to_vec();
    if s.len() != 3 {
        return Err(shape_err(format!(
            "Chebyshev weights must be rank 3, got {s:?}"
        )));
    }
    let p = tape.permute(weight, &[0, 2, 1])?;
    tape.reshape(p, &[s[0] * s[2], s[1]])
}

/// Graph convolution of a `[N, f_in]` signal with a prepared weight matrix
/// (see [`weight_matrix`]).
pub fn graph_conv_mat(
    tape: &mut Tape,
    lap: &TapeLaplacian,
    wmat: Var,
    bias: Option<Var>,
    x: Var,
    order: usize,
) -> Result<Var> {
    let (n, f_in) = {
        let s = tape.shape(x);
        if s.len() != 2 {
            return Err(shape_err(format!("graph signal must be [N, f], got {s:?}")));
        }
        (s[0], s[1])
    };
    if tape.shape(wmat)[0] != order * f_in {
        return Err(shape_err(format!(
            "weights expect {} inputs per node, signal has K*f = {}",
            tape.shape(wmat)[0],
            order * f_in
        )));
    }
    let basis = cheb_basis(tape, lap, x, order)?;
    let basis = tape.permute(basis, &[1, 0, 2])?;
    let basis = tape.reshape(basis, &[n, order * f_in])?;
    let out = tape.matmul(basis, wmat)?;
    match bias {
        Some(b) => tape.add(out, b),
        None => Ok(out),
    }
}

/// Graph convolution applied independently at every step of a `[T, N, f_in]`
/// sequence, producing `[T, N, f_out]`. All steps share one basis pass.
pub fn graph_conv_seq_mat(
    tape: &mut Tape,
    lap: &TapeLaplacian,
    wmat: Var,
    bias: Option<Var>,
    x: Var,
    order: usize,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(shape_err(format!("sequence must be [T, N, f], got {s:?}")));
    }
    let (t_len, n, f_in) = (s[0], s[1], s[2]);
    if tape.shape(wmat)[0] != order * f_in {
        return Err(shape_err(format!(
            "weights expect {} inputs per node, sequence has K*f = {}",
            tape.shape(wmat)[0],
            order * f_in
        )));
    }
    let f_out = tape.shape(wmat)[1];
    let nodes_first = tape.permute(x, &[1, 0, 2])?;
    let flat = tape.reshape(nodes_first, &[n, t_len * f_in])?;
    let basis = cheb_basis(tape, lap, flat, order)?;
    let basis = tape.reshape(basis, &[order, n, t_len, f_in])?;
    let basis = tape.permute(basis, &[2, 1, 0, 3])?;
    let basis = tape.reshape(basis, &[t_len * n, order * f_in])?;
    let out = tape.matmul(basis, wmat)?;
    let out = match bias {
        Some(b) => tape.add(out, b)?,
        None => out,
    };
    tape.reshape(out, &[t_len, n, f_out])
}

/// Tape-level graph convolution with `W[K, f_out, f_in]`.
pub fn graph_conv(
    tape: &mut Tape,
    lap: &TapeLaplacian,
    weight: Var,
    bias: Option<Var>,
    x: Var,
) -> Result<Var> {
    let ws = tape.shape(weight).to_vec();
    if ws.len() != 3 {
        return Err(shape_err(format!(
            "Chebyshev weights must be rank 3, got {ws:?}"
        )));
    }
    if tape.shape(x).len() != 2 || tape.shape(x)[1] != ws[2] {
        return Err(shape_err(format!(
            "signal {:?} does not match weights {:?}",
            tape.shape(x),
            ws
        )));
    }
    let wmat = weight_matrix(tape, weight)?;
    graph_conv_mat(tape, lap, wmat, bias, x, ws[0])
}

/// Evaluates `[T_0(L~) x, ..., T_{K-1}(L~) x]` for a fixed Laplacian.
pub fn cheb_apply(lap: &ScaledLaplacian, x: &Tensor, order: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let l = TapeLaplacian::constant(&mut tape, lap);
    let xv = tape.constant(x.clone());
    let out = cheb_basis(&mut tape, &l, xv, order)?;
    Ok(tape.value(out).clone())
}

/// Plain-value Chebyshev filter bank, `weights[K, f_out, f_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebConvWeights {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl ChebConvWeights {
    pub fn new(weights: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weights.rank() != 3 || weights.shape()[0] == 0 {
            return Err(shape_err(format!(
                "weights must be [K >= 1, f_out, f_in], got {:?}",
                weights.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [weights.shape()[1]] {
                return Err(shape_err(format!(
                    "bias {:?} for {} output features",
                    b.shape(),
                    weights.shape()[1]
                )));
            }
        }
        Ok(Self { weights, bias })
    }

    pub fn order(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Applies the filter to a `[N, f_in]` signal.
    pub fn apply(&self, lap: &ScaledLaplacian, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let l = TapeLaplacian::constant(&mut tape, lap);
        let w = tape.constant(self.weights.clone());
        let b = self.bias.clone().map(|b| tape.constant(b));
        let xv = tape.constant(x.clone());
        let out = graph_conv(&mut tape, &l, w, b, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Trainable Chebyshev convolution registered in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChebConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub order: usize,
    pub in_features: usize,
    pub out_features: usize,
}

impl ChebConv {
    /// Glorot-uniform weights over `K * f_in` fan-in; zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        order: usize,
        in_features: usize,
        out_features: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / ((order * in_features + out_features) as f64)).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let w = Tensor::from_fn(&[order, out_features, in_features], |_| dist.sample(rng));
        let weight = store.add(format!("{name}.weight"), w);
        let bias =
            with_bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_features])));
        Self {
            weight,
            bias,
            order,
            in_features,
            out_features,
        }
    }

    pub fn values(&self, store: &ParamStore) -> ChebConvWeights {
        ChebConvWeights {
            weights: store.get(self.weight).clone(),
            bias: self.bias.map(|b| store.get(b).clone()),
        }
    }
}
