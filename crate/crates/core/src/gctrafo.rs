//! Graph-convolutional transformer.
//!
//! Encoder head: three causal temporal convolutions turn the input sequence
//! into `x̃, x̆, x̌`; Chebyshev convolutions on the head's trainable Laplacian
//! map them to `q, k, v`; softmax dot-product attention runs over time for
//! each node. Heads are concatenated and a linear layer yields `x′`.
//!
//! Decoder head: queries come from a causal convolution plus linear
//! embedding of the exogenous inputs `y` (no graph convolution), keys are a
//! linear map of `x′` and values are `x′` itself. The output layer sees
//! `[att ; emb ; att ⊗ emb]` for every head.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, ParamVars, SparsePattern, Tape, Tensor, Var};
use crate::datagen::{DECODER_FEATURES, ENCODER_FEATURES};
use crate::error::{invalid, shape_err, Result};
use crate::graph::{graph_conv_seq_mat, weight_matrix, ChebConv, ScaledLaplacian, TapeLaplacian};
use crate::nn::{glorot, Linear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GctrafoConfig {
    pub lat: usize,
    pub heads: usize,
    /// Chebyshev order K.
    pub order: usize,
    /// Width of the causal temporal convolutions.
    pub kernel: usize,
    pub encoder_features: usize,
    pub decoder_features: usize,
    /// Divide attention scores by `sqrt(lat)`. Off by default.
    #[serde(default)]
    pub scale_attention: bool,
}

impl GctrafoConfig {
    /// kernel 4, lat 8, 8 heads, K 2.
    pub fn full() -> Self {
        Self {
            lat: 8,
            heads: 8,
            order: 2,
            kernel: 4,
            encoder_features: ENCODER_FEATURES,
            decoder_features: DECODER_FEATURES,
            scale_attention: false,
        }
    }

    /// Two heads, otherwise the full-scale dimensions.
    pub fn desk() -> Self {
        Self {
            heads: 2,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.lat,
            self.heads,
            self.order,
            self.kernel,
            self.encoder_features,
            self.decoder_features,
        ];
        if dims.contains(&0) {
            return Err(invalid(format!("GCTrafo dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

fn check_attention_shapes(tape: &Tape, q: Var, k: Var, v: Option<Var>) -> Result<()> {
    let (sq, sk) = (tape.shape(q), tape.shape(k));
    let sv = v.map(|v| tape.shape(v)).unwrap_or(sk);
    if sq.len() != 3 || sk.len() != 3 || sk != sv || sq[1] != sk[1] || sq[2] != sk[2] || sk[0] == 0
    {
        return Err(shape_err(format!(
            "attention shapes q {sq:?}, k {sk:?}, v {sv:?}"
        )));
    }
    Ok(())
}

fn scores_to_weights(tape: &mut Tape, qn: Var, kn: Var, scale: bool) -> Result<Var> {
    let mut scores = tape.bmm(qn, kn, true)?;
    if scale {
        let d = tape.shape(qn)[2] as f64;
        scores = tape.scale(scores, 1.0 / d.sqrt());
    }
    tape.softmax(scores, 2)
}

/// Attention weights `[N, T_q, T_k]` for `q` `[T_q, N, d]` and `k`
/// `[T_k, N, d]`; each row sums to one.
pub fn attention_weights(tape: &mut Tape, q: Var, k: Var, scale: bool) -> Result<Var> {
    check_attention_shapes(tape, q, k, None)?;
    let qn = tape.permute(q, &[1, 0, 2])?;
    let kn = tape.permute(k, &[1, 0, 2])?;
    scores_to_weights(tape, qn, kn, scale)
}

/// Softmax dot-product attention over time, independently per node.
///
/// `q` is `[T_q, N, d]`, `k` and `v` are `[T_k, N, d]`; the result is
/// `[T_q, N, d]`. With `scale` the scores are divided by `sqrt(d)`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, scale: bool) -> Result<Var> {
    check_attention_shapes(tape, q, k, Some(v))?;
    let weights = attention_weights(tape, q, k, scale)?;
    let vn = tape.permute(v, &[1, 0, 2])?;
    let out = tape.bmm(weights, vn, false)?;
    tape.permute(out, &[1, 0, 2])
}

/// Causal temporal convolution with an optional per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalConv {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
}

impl TemporalConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = glorot(
            &[out_channels, in_channels, width],
            in_channels * width,
            out_channels,
            rng,
        );
        Self {
            kernel: store.add(format!("{name}.kernel"), w),
            bias: with_bias
                .then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))),
        }
    }

    /// `[T, N, C_in]` to `[T, N, C_out]`.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<Var> {
        let y = tape.temporal_conv1d(x, vars.get(self.kernel), true)?;
        match self.bias {
            Some(b) => tape.add(y, vars.get(b)),
            None => Ok(y),
        }
    }
}

/// One encoder attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderHead {
    pub conv_q: TemporalConv,
    pub conv_k: TemporalConv,
    pub conv_v: TemporalConv,
    pub w_q: ChebConv,
    pub w_k: ChebConv,
    pub w_v: ChebConv,
    pub laplacian: ParamId,
}

/// One decoder attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderHead {
    pub conv: TemporalConv,
    pub embed: Linear,
    pub key: Linear,
}

#[derive(Clone, Debug)]
pub struct Gctrafo {
    pub config: GctrafoConfig,
    pub encoder_heads: Vec<EncoderHead>,
    pub encoder_out: Linear,
    pub decoder_heads: Vec<DecoderHead>,
    pub decoder_out: Linear,
    pattern: Arc<SparsePattern>,
}

impl Gctrafo {
    pub fn new(
        config: GctrafoConfig,
        lap: &ScaledLaplacian,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (lat, k, w) = (config.lat, config.order, config.kernel);
        let fe = config.encoder_features;
        let encoder_heads = (0..config.heads)
            .map(|h| {
                let p = format!("encoder.head{h}");
                // A key bias shifts every score in a softmax row equally, so
                // keys carry none.
                EncoderHead {
                    conv_q: TemporalConv::new(store, &format!("{p}.conv_q"), fe, lat, w, true, rng),
                    conv_k: TemporalConv::new(
                        store,
                        &format!("{p}.conv_k"),
                        fe,
                        lat,
                        w,
                        false,
                        rng,
                    ),
                    conv_v: TemporalConv::new(store, &format!("{p}.conv_v"), fe, lat, w, true, rng),
                    w_q: ChebConv::new(store, &format!("{p}.w_q"), k, lat, lat, false, rng),
                    w_k: ChebConv::new(store, &format!("{p}.w_k"), k, lat, lat, false, rng),
                    w_v: ChebConv::new(store, &format!("{p}.w_v"), k, lat, lat, false, rng),
                    laplacian: store.add(
                        format!("{p}.laplacian"),
                        Tensor::new(&[lap.values().len()], lap.values().to_vec()).expect("1-d"),
                    ),
                }
            })
            .collect();
        let encoder_out = Linear::new(store, "encoder.out", config.heads * lat, lat, true, rng);
        let fd = config.decoder_features;
        let decoder_heads = (0..config.heads)
            .map(|h| {
                let p = format!("decoder.head{h}");
                DecoderHead {
                    conv: TemporalConv::new(store, &format!("{p}.conv"), fd, lat, w, true, rng),
                    embed: Linear::new(store, &format!("{p}.embed"), lat, lat, true, rng),
                    key: Linear::new(store, &format!("{p}.key"), lat, lat, false, rng),
                }
            })
            .collect();
        let decoder_out = Linear::new(store, "decoder.out", config.heads * 3 * lat, 1, true, rng);
        Ok(Self {
            config,
            encoder_heads,
            encoder_out,
            decoder_heads,
            decoder_out,
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
        self.encoder_heads.iter().map(|h| h.laplacian).collect()
    }

    /// `[M, N, f_enc]` to `x′` of shape `[M, N, lat]`.
    pub fn encode(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let n = self.n_nodes();
        if s.len() != 3 || s[1] != n || s[2] != self.config.encoder_features {
            return Err(shape_err(format!("encoder input {s:?} for {n} nodes")));
        }
        let order = self.config.order;
        let mut outs = Vec::with_capacity(self.encoder_heads.len());
        for head in &self.encoder_heads {
            let lap = TapeLaplacian {
                pattern: Arc::clone(&self.pattern),
                values: vars.get(head.laplacian),
            };
            let gconv = |tape: &mut Tape, conv: &TemporalConv, w: &ChebConv| {
                let xt = conv.forward(tape, vars, x)?;
                let wm = weight_matrix(tape, vars.get(w.weight))?;
                graph_conv_seq_mat(tape, &lap, wm, None, xt, order)
            };
            let q = gconv(tape, &head.conv_q, &head.w_q)?;
            let k = gconv(tape, &head.conv_k, &head.w_k)?;
            let v = gconv(tape, &head.conv_v, &head.w_v)?;
            outs.push(attention(tape, q, k, v, self.config.scale_attention)?);
        }
        let cat = tape.concat(&outs, 2)?;
        self.encoder_out.forward(tape, vars, cat)
    }

    /// `x′` `[M, N, lat]` and `y` `[H, N, f_dec]` to predictions `[H, N]`.
    pub fn decode(&self, tape: &mut Tape, vars: &ParamVars, x_prime: Var, y: Var) -> Result<Var> {
        let s = tape.shape(y).to_vec();
        let n = self.n_nodes();
        if s.len() != 3 || s[1] != n || s[2] != self.config.decoder_features {
            return Err(shape_err(format!("decoder input {s:?} for {n} nodes")));
        }
        let mut blocks = Vec::with_capacity(3 * self.decoder_heads.len());
        for head in &self.decoder_heads {
            let c = head.conv.forward(tape, vars, y)?;
            let emb = head.embed.forward(tape, vars, c)?;
            let keys = head.key.forward(tape, vars, x_prime)?;
            let att = attention(tape, emb, keys, x_prime, self.config.scale_attention)?;
            let prod = tape.mul(att, emb)?;
            blocks.extend([att, emb, prod]);
        }
        let cat = tape.concat(&blocks, 2)?;
        let out = self.decoder_out.forward(tape, vars, cat)?;
        tape.reshape(out, &[s[0], n])
    }

    /// `x` is `[M, N, f_enc]`, `y` is `[H, N, f_dec]`; returns `[H, N]`.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var, y: Var) -> Result<Var> {
        let xp = self.encode(tape, vars, x)?;
        self.decode(tape, vars, xp, y)
    }
}
