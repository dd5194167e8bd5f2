//! Graph-convolutional LSTM encoder–decoder.
//!
//! Each cell computes
//!
//! ```text
//! f = σ(W_fh * h + W_fx * x + b_f)
//! i = σ(W_ih * h + W_ix * x + b_i)
//! o = σ(W_oh * h + W_ox * x + b_o)
//! c = i ⊗ tanh(W_ch * h + W_cx * x + b_c) + f ⊗ c_prev
//! h = o ⊗ tanh(c)
//! ```
//!
//! where `*` is Chebyshev graph convolution on the cell's own trainable
//! Laplacian. The four gates are evaluated as one fused convolution.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, ParamVars, SparsePattern, Tape, Tensor, Var};
use crate::datagen::{DECODER_FEATURES, ENCODER_FEATURES};
use crate::error::{invalid, shape_err, Result};
use crate::graph::{
    graph_conv_mat, graph_conv_seq_mat, weight_matrix, ChebConv, ScaledLaplacian, TapeLaplacian,
};
use crate::nn::Mlp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GclstmConfig {
    pub lat: usize,
    /// Chebyshev order K.
    pub order: usize,
    pub encoder_features: usize,
    pub decoder_features: usize,
    /// Hidden widths of the per-node output MLP.
    pub mlp_hidden: Vec<usize>,
}

impl GclstmConfig {
    /// lat 32, K 4, MLP [8, 48, 48].
    pub fn full() -> Self {
        Self {
            lat: 32,
            order: 4,
            encoder_features: ENCODER_FEATURES,
            decoder_features: DECODER_FEATURES,
            mlp_hidden: vec![8, 48, 48],
        }
    }

    /// lat 8, K 3.
    pub fn desk() -> Self {
        Self {
            lat: 8,
            order: 3,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lat == 0 || self.order == 0 || self.encoder_features == 0 {
            return Err(invalid(format!("GCLSTM dims must be positive: {self:?}")));
        }
        if self.decoder_features == 0 || self.mlp_hidden.contains(&0) {
            return Err(invalid(format!("GCLSTM dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Parameter handles of one GCLSTM cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GclstmCell {
    pub w_fh: ChebConv,
    pub w_fx: ChebConv,
    pub w_ih: ChebConv,
    pub w_ix: ChebConv,
    pub w_oh: ChebConv,
    pub w_ox: ChebConv,
    pub w_ch: ChebConv,
    pub w_cx: ChebConv,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    /// Values of the cell's scaled Laplacian on the shared pattern.
    pub laplacian: ParamId,
    pub lat: usize,
    pub in_features: usize,
    pub order: usize,
}

/// Cell state `(c, h)`, each `[N, lat]`.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub c: Var,
    pub h: Var,
}

impl CellState {
    pub fn zeros(tape: &mut Tape, n_nodes: usize, lat: usize) -> Self {
        Self {
            c: tape.constant(Tensor::zeros(&[n_nodes, lat])),
            h: tape.constant(Tensor::zeros(&[n_nodes, lat])),
        }
    }
}

/// A cell's weights laid out for the fused gate computation.
pub struct BoundCell {
    lap: TapeLaplacian,
    wh: Var,
    wx: Var,
    bias: Var,
    lat: usize,
    order: usize,
}

impl GclstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        lat: usize,
        in_features: usize,
        order: usize,
        lap: &ScaledLaplacian,
        rng: &mut impl Rng,
    ) -> Self {
        let mut conv = |name: &str, fin: usize| {
            ChebConv::new(
                store,
                &format!("{prefix}.{name}"),
                order,
                fin,
                lat,
                false,
                rng,
            )
        };
        let w_fh = conv("w_fh", lat);
        let w_fx = conv("w_fx", in_features);
        let w_ih = conv("w_ih", lat);
        let w_ix = conv("w_ix", in_features);
        let w_oh = conv("w_oh", lat);
        let w_ox = conv("w_ox", in_features);
        let w_ch = conv("w_ch", lat);
        let w_cx = conv("w_cx", in_features);
        let mut bias = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[lat]));
        let (b_f, b_i, b_o, b_c) = (bias("b_f"), bias("b_i"), bias("b_o"), bias("b_c"));
        let laplacian = store.add(
            format!("{prefix}.laplacian"),
            Tensor::new(&[lap.values().len()], lap.values().to_vec()).expect("1-d"),
        );
        Self {
            w_fh,
            w_fx,
            w_ih,
            w_ix,
            w_oh,
            w_ox,
            w_ch,
            w_cx,
            b_f,
            b_i,
            b_o,
            b_c,
            laplacian,
            lat,
            in_features,
            order,
        }
    }

    /// Records the cell's parameters in fused form: gate order f, i, o, c.
    pub fn bind(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        pattern: &Arc<SparsePattern>,
    ) -> Result<BoundCell> {
        let fuse = |tape: &mut Tape, convs: [&ChebConv; 4]| -> Result<Var> {
            let mats = convs
                .iter()
                .map(|c| weight_matrix(tape, vars.get(c.weight)))
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&mats, 1)
        };
        let wh = fuse(tape, [&self.w_fh, &self.w_ih, &self.w_oh, &self.w_ch])?;
        let wx = fuse(tape, [&self.w_fx, &self.w_ix, &self.w_ox, &self.w_cx])?;
        let biases: Vec<Var> = [self.b_f, self.b_i, self.b_o, self.b_c]
            .iter()
            .map(|&b| vars.get(b))
            .collect();
        let bias = tape.concat(&biases, 0)?;
        Ok(BoundCell {
            lap: TapeLaplacian {
                pattern: Arc::clone(pattern),
                values: vars.get(self.laplacian),
            },
            wh,
            wx,
            bias,
            lat: self.lat,
            order: self.order,
        })
    }

    pub fn laplacian_ids(&self) -> [ParamId; 1] {
        [self.laplacian]
    }
}

impl BoundCell {
    /// Input terms `W_·x * x + b_·` for a whole `[T, N, f_in]` sequence,
    /// giving `[T, N, 4 lat]`.
    pub fn input_terms(&self, tape: &mut Tape, x_seq: Var) -> Result<Var> {
        graph_conv_seq_mat(tape, &self.lap, self.wx, Some(self.bias), x_seq, self.order)
    }

    /// Input terms for a single `[N, f_in]` step, giving `[N, 4 lat]`.
    pub fn input_term(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        graph_conv_mat(tape, &self.lap, self.wx, Some(self.bias), x, self.order)
    }

    /// One cell update given precomputed input terms `[N, 4 lat]`.
    /// `state = None` is the zero state.
    pub fn step_with_terms(
        &self,
        tape: &mut Tape,
        state: Option<CellState>,
        x_terms: Var,
    ) -> Result<CellState> {
        let lat = self.lat;
        let pre = match state {
            Some(s) => {
                let hterm = graph_conv_mat(tape, &self.lap, self.wh, None, s.h, self.order)?;
                tape.add(hterm, x_terms)?
            }
            None => x_terms,
        };
        let gate = |tape: &mut Tape, k: usize| tape.slice(pre, 1, k * lat, lat);
        let f = gate(tape, 0)?;
        let f = tape.sigmoid(f);
        let i = gate(tape, 1)?;
        let i = tape.sigmoid(i);
        let o = gate(tape, 2)?;
        let o = tape.sigmoid(o);
        let g = gate(tape, 3)?;
        let g = tape.tanh(g);
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some(s) => {
                let fc = tape.mul(f, s.c)?;
                tape.add(ig, fc)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(CellState { c, h })
    }

    /// One cell update on a `[N, f_in]` input.
    pub fn step(&self, tape: &mut Tape, state: CellState, x: Var) -> Result<CellState> {
        let terms = self.input_term(tape, x)?;
        self.step_with_terms(tape, Some(state), terms)
    }

    /// Runs the cell over `[T, N, f_in]`, returning every state.
    pub fn run(
        &self,
        tape: &mut Tape,
        initial: Option<CellState>,
        x_seq: Var,
    ) -> Result<Vec<CellState>> {
        let s = tape.shape(x_seq).to_vec();
        if s.len() != 3 {
            return Err(shape_err(format!(
                "cell input must be [T, N, f], got {s:?}"
            )));
        }
        let terms = self.input_terms(tape, x_seq)?;
        let mut state = initial;
        let mut out = Vec::with_capacity(s[0]);
        for t in 0..s[0] {
            let step = tape.slice(terms, 0, t, 1)?;
            let step = tape.reshape(step, &[s[1], 4 * self.lat])?;
            let next = self.step_with_terms(tape, state, step)?;
            out.push(next);
            state = Some(next);
        }
        Ok(out)
    }
}

/// The full GCLSTM forecaster.
#[derive(Clone, Debug)]
pub struct Gclstm {
    pub config: GclstmConfig,
    pub encoder: GclstmCell,
    pub decoder: GclstmCell,
    pub mlp: Mlp,
    pattern: Arc<SparsePattern>,
}

impl Gclstm {
    /// Registers all parameters in `store`. Both cells start from `lap`.
    pub fn new(
        config: GclstmConfig,
        lap: &ScaledLaplacian,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (lat, k) = (config.lat, config.order);
        let encoder = GclstmCell::new(store, "encoder", lat, config.encoder_features, k, lap, rng);
        let decoder = GclstmCell::new(store, "decoder", lat, config.decoder_features, k, lap, rng);
        let mut widths = vec![lat];
        widths.extend(&config.mlp_hidden);
        widths.push(1);
        let mlp = Mlp::new(store, "mlp", &widths, rng);
        Ok(Self {
            config,
            encoder,
            decoder,
            mlp,
            pattern: Arc::clone(lap.pattern()),
        })
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn n_nodes(&self) -> usize {
        self.pattern.n_rows()
    }

    pub fn laplacian_ids(&self) -> Vec<ParamId> {
        vec![self.encoder.laplacian, self.decoder.laplacian]
    }

    /// `x` is `[M, N, f_enc]`, `y` is `[H, N, f_dec]`; returns `[H, N]`.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var, y: Var) -> Result<Var> {
        let (xs, ys) = (tape.shape(x).to_vec(), tape.shape(y).to_vec());
        let n = self.n_nodes();
        if xs.len() != 3 || xs[1] != n || xs[2] != self.config.encoder_features {
            return Err(shape_err(format!("encoder input {xs:?} for {n} nodes")));
        }
        if ys.len() != 3 || ys[1] != n || ys[2] != self.config.decoder_features {
            return Err(shape_err(format!("decoder input {ys:?} for {n} nodes")));
        }
        let enc = self.encoder.bind(tape, vars, &self.pattern)?;
        let dec = self.decoder.bind(tape, vars, &self.pattern)?;
        let enc_states = enc.run(tape, None, x)?;
        let last = *enc_states.last().expect("M >= 1");
        let dec_states = dec.run(tape, Some(last), y)?;
        let lat = self.config.lat;
        let hs = dec_states
            .iter()
            .map(|s| tape.reshape(s.h, &[1, n, lat]))
            .collect::<Result<Vec<_>>>()?;
        let hs = tape.concat(&hs, 0)?;
        let out = self.mlp.forward(tape, vars, hs)?;
        tape.reshape(out, &[ys[0], n])
    }
}
