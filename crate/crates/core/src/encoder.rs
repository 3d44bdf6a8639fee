//! Small pre-LayerNorm transformer encoder. The embedding of a pair is the
//! final hidden state at the `[CLS]` position.
//!
//! Padding is only ever at the tail, so attention is computed over the
//! unpadded prefix. That is exactly equivalent to masking padded keys and
//! makes the embedding independent of how much padding follows.

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::error::{DameError, Result};
use crate::vocab::SerializedPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            max_len: 128,
            vocab_size: 6,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(DameError::Config(format!("encoder.{name} must be positive")));
        }
        if !self.d.is_multiple_of(self.n_heads) {
            return Err(DameError::Config(format!(
                "encoder.d ({}) must be divisible by n_heads ({})",
                self.d, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DameError::Config("encoder.dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}

/// Forward-pass mode. Training mode carries the rng that drives dropout.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub(crate) fn dropout<'a>(g: &mut Graph<'a>, x: Var, rate: f64, mode: &mut Mode<'_>) -> Var {
    match mode {
        Mode::Eval => x,
        Mode::Train(rng) => g.dropout(x, rate, &mut **rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Mat,
    pub lnf_b: Mat,
}

/// Rounds to the nearest `f32` so checkpoints store parameters exactly.
pub(crate) fn round_f32(m: &mut Mat) {
    m.mapv_inplace(|v| v as f32 as f64);
}

/// Uniform in ±1/√fan_in, rounded to f32 precision.
pub(crate) fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Mat {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut m = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound));
    round_f32(&mut m);
    m
}

impl LayerParams {
    fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let (d, f) = (cfg.d, cfg.ffn_dim);
        LayerParams {
            ln1_g: Mat::ones((1, d)),
            ln1_b: Mat::zeros((1, d)),
            wq: uniform(d, d, d, rng),
            bq: Mat::zeros((1, d)),
            wk: uniform(d, d, d, rng),
            bk: Mat::zeros((1, d)),
            wv: uniform(d, d, d, rng),
            bv: Mat::zeros((1, d)),
            wo: uniform(d, d, d, rng),
            bo: Mat::zeros((1, d)),
            ln2_g: Mat::ones((1, d)),
            ln2_b: Mat::zeros((1, d)),
            w1: uniform(d, f, d, rng),
            b1: Mat::zeros((1, f)),
            w2: uniform(f, d, f, rng),
            b2: Mat::zeros((1, d)),
        }
    }

    fn named(&self) -> [(&'static str, &Mat); 16] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Mat; 16] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

pub fn init_encoder(cfg: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d;
    let tok_emb = uniform(cfg.vocab_size, d, d, &mut rng);
    let pos_emb = uniform(cfg.max_len, d, d, &mut rng);
    let layers = (0..cfg.n_layers).map(|_| LayerParams::init(cfg, &mut rng)).collect();
    Ok(EncoderParams {
        config: *cfg,
        tok_emb,
        pos_emb,
        layers,
        lnf_g: Mat::ones((1, d)),
        lnf_b: Mat::zeros((1, d)),
    })
}

impl EncoderParams {
    /// Tensors with names relative to this encoder, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.named().into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out.push(("lnf_g".to_string(), &self.lnf_g));
        out.push(("lnf_b".to_string(), &self.lnf_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out
    }

    pub fn check_input(&self, sp: &SerializedPair) -> Result<()> {
        let cfg = &self.config;
        if sp.token_ids.len() > cfg.max_len {
            return Err(DameError::Config(format!(
                "sequence length {} exceeds encoder max_len {}",
                sp.token_ids.len(),
                cfg.max_len
            )));
        }
        if let Some(&id) = sp.token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(DameError::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// Records the encoder on `g` and returns the 1×d `[CLS]` embedding.
    /// The input is assumed to have passed [`EncoderParams::check_input`].
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, sp: &SerializedPair, mode: &mut Mode<'_>) -> Var {
        let cfg = &self.config;
        let ids = sp.real_ids();
        let n = ids.len().max(1);
        let ids: &[usize] = if ids.is_empty() { &sp.token_ids[..1] } else { ids };
        let rate = cfg.dropout_rate;

        let tok = g.gather(&self.tok_emb, ids);
        let pos = g.param(&self.pos_emb);
        let pos = g.rows(pos, 0, n);
        let mut h = g.add(tok, pos);
        h = dropout(g, h, rate, mode);

        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let last = self.layers.len() - 1;
        for (l, p) in self.layers.iter().enumerate() {
            // the last layer only needs the [CLS] query
            let q_rows = if l == last { 1 } else { n };
            let ln1_g = g.param(&p.ln1_g);
            let ln1_b = g.param(&p.ln1_b);
            let a = g.layer_norm(h, ln1_g, ln1_b);
            let a_q = if q_rows == n { a } else { g.rows(a, 0, q_rows) };
            let q = linear(g, a_q, &p.wq, &p.bq);
            let k = linear(g, a, &p.wk, &p.bk);
            let v = linear(g, a, &p.wv, &p.bv);
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for hd in 0..cfg.n_heads {
                let qh = g.cols(q, hd * dh, dh);
                let kh = g.cols(k, hd * dh, dh);
                let vh = g.cols(v, hd * dh, dh);
                let s = g.matmul_t(qh, kh);
                let s = g.scale(s, scale);
                let att = g.softmax(s);
                heads.push(g.matmul(att, vh));
            }
            let o = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)
            };
            let o = linear(g, o, &p.wo, &p.bo);
            let o = dropout(g, o, rate, mode);
            let h_res = if q_rows == n { h } else { g.rows(h, 0, q_rows) };
            h = g.add(h_res, o);

            let ln2_g = g.param(&p.ln2_g);
            let ln2_b = g.param(&p.ln2_b);
            let f = g.layer_norm(h, ln2_g, ln2_b);
            let f = linear(g, f, &p.w1, &p.b1);
            let f = g.gelu(f);
            let f = linear(g, f, &p.w2, &p.b2);
            let f = dropout(g, f, rate, mode);
            h = g.add(h, f);
        }
        let lnf_g = g.param(&self.lnf_g);
        let lnf_b = g.param(&self.lnf_b);
        g.layer_norm(h, lnf_g, lnf_b)
    }
}

pub(crate) fn linear<'a>(g: &mut Graph<'a>, x: Var, w: &'a Mat, b: &'a Mat) -> Var {
    let wv = g.param(w);
    let bv = g.param(b);
    let y = g.matmul(x, wv);
    g.add_row(y, bv)
}

/// Embedding of `sp` at the `[CLS]` position.
pub fn encode(params: &EncoderParams, sp: &SerializedPair, mode: &mut Mode<'_>) -> Result<Array1<f64>> {
    params.check_input(sp)?;
    let mut g = Graph::new();
    let out = params.forward(&mut g, sp, mode);
    Ok(g.value(out).row(0).to_owned())
}
