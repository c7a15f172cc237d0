//! GRU encoder, FC attention, GRU decoder, the full sequence-to-sequence
//! assembly with the optional spectral layer in front, and the Linear and
//! NLinear baselines.

use crate::asl::{AslConfig, AslState};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softmax, softmax_backward, Linear, Mode};
use crate::rng::Rng;
use crate::tensor::{axpy, dot, matvec_acc, matvec_t_acc, outer_acc, Parameter, Tensor};
use serde::{Deserialize, Serialize};

/// Which model the training pipeline instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelClass {
    Seq2Seq,
    Linear,
    NLinear,
}

impl ModelClass {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "Seq2Seq" => Ok(ModelClass::Seq2Seq),
            "Linear" => Ok(ModelClass::Linear),
            "NLinear" => Ok(ModelClass::NLinear),
            other => Err(Error::Config(format!(
                "unknown model_class_name '{other}' (expected Seq2Seq, Linear, or NLinear)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelClass::Seq2Seq => "Seq2Seq",
            ModelClass::Linear => "Linear",
            ModelClass::NLinear => "NLinear",
        }
    }
}

/// Every architectural knob of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of force channels M_F.
    pub input_channels: usize,
    pub feature_win: usize,
    pub target_win: usize,
    pub enc_embedding_size: usize,
    pub enc_hidden_size: usize,
    pub enc_num_layers: usize,
    pub enc_bidirectional: bool,
    pub dec_embedding_size: usize,
    pub dec_hidden_size: usize,
    /// Number of predicted kinematic channels M_K.
    pub dec_output_size: usize,
    pub attn_heads: usize,
    pub use_asl: bool,
    pub asl: AslConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 4,
            feature_win: 512,
            target_win: 1,
            enc_embedding_size: 10,
            enc_hidden_size: 110,
            enc_num_layers: 1,
            enc_bidirectional: false,
            dec_embedding_size: 10,
            dec_hidden_size: 110,
            dec_output_size: 3,
            attn_heads: 1,
            use_asl: true,
            asl: AslConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_channels", self.input_channels),
            ("feature_win", self.feature_win),
            ("target_win", self.target_win),
            ("enc_embedding_size", self.enc_embedding_size),
            ("enc_hidden_size", self.enc_hidden_size),
            ("enc_num_layers", self.enc_num_layers),
            ("dec_embedding_size", self.dec_embedding_size),
            ("dec_hidden_size", self.dec_hidden_size),
            ("dec_output_size", self.dec_output_size),
            ("attn_heads", self.attn_heads),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.use_asl {
            self.asl.validate()?;
            if !self.feature_win.is_power_of_two() {
                return Err(Error::Config(format!(
                    "feature_win must be a power of two when the spectral layer is on, got {}",
                    self.feature_win
                )));
            }
        }
        Ok(())
    }

    /// Channel count seen by the encoder (doubled by a concat skip).
    pub fn encoder_input_channels(&self) -> usize {
        if self.use_asl {
            self.asl.output_channels(self.input_channels)
        } else {
            self.input_channels
        }
    }

    /// Width of one encoder output step: D * hidden.
    pub fn encoder_output_width(&self) -> usize {
        let d = if self.enc_bidirectional { 2 } else { 1 };
        d * self.enc_hidden_size
    }
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

/// Weights of one gated recurrent unit cell: input and hidden matrices plus
/// bias for the reset, update, and candidate gates.
#[derive(Debug, Clone)]
pub struct GruCellParams {
    pub w_r: Parameter,
    pub u_r: Parameter,
    pub b_r: Parameter,
    pub w_z: Parameter,
    pub u_z: Parameter,
    pub b_z: Parameter,
    pub w_n: Parameter,
    pub u_n: Parameter,
    pub b_n: Parameter,
}

impl GruCellParams {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w = |rng: &mut Rng| Parameter::uniform_fan_in(&[input, hidden], input, rng);
        let u = |rng: &mut Rng| Parameter::uniform_fan_in(&[hidden, hidden], hidden, rng);
        Self {
            w_r: w(rng),
            u_r: u(rng),
            b_r: Parameter::zeros(&[hidden]),
            w_z: w(rng),
            u_z: u(rng),
            b_z: Parameter::zeros(&[hidden]),
            w_n: w(rng),
            u_n: u(rng),
            b_n: Parameter::zeros(&[hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_r.value.dim(0)
    }

    pub fn hidden_size(&self) -> usize {
        self.w_r.value.dim(1)
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        for (name, p) in [
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_n", &self.w_n),
            ("u_n", &self.u_n),
            ("b_n", &self.b_n),
        ] {
            f(format!("{prefix}.{name}"), p);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        for (name, p) in [
            ("w_r", &mut self.w_r),
            ("u_r", &mut self.u_r),
            ("b_r", &mut self.b_r),
            ("w_z", &mut self.w_z),
            ("u_z", &mut self.u_z),
            ("b_z", &mut self.b_z),
            ("w_n", &mut self.w_n),
            ("u_n", &mut self.u_n),
            ("b_n", &mut self.b_n),
        ] {
            f(format!("{prefix}.{name}"), p);
        }
    }
}

/// Per-step values the backward pass needs.
#[derive(Debug, Clone, Default)]
struct GruStepCache {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// U_n h_prev before the reset gate multiplies it.
    unh: Vec<f64>,
}

/// One GRU step:
/// r = sigmoid(W_r x + U_r h + b_r), z = sigmoid(W_z x + U_z h + b_z),
/// n = tanh(W_n x + r * (U_n h) + b_n), h' = (1 - z) * n + z * h.
pub fn gru_cell(x: &[f64], h: &[f64], p: &GruCellParams) -> Result<Vec<f64>> {
    if x.len() != p.input_size() || h.len() != p.hidden_size() {
        return Err(Error::Shape {
            op: "gru_cell",
            detail: format!(
                "x len {} / h len {} vs cell [{} -> {}]",
                x.len(),
                h.len(),
                p.input_size(),
                p.hidden_size()
            ),
        });
    }
    let (h_new, _) = gru_step(x, h, p);
    Ok(h_new)
}

fn gru_step(x: &[f64], h: &[f64], p: &GruCellParams) -> (Vec<f64>, GruStepCache) {
    let hid = p.hidden_size();
    let mut pre_r = p.b_r.value.data().to_vec();
    matvec_acc(&mut pre_r, x, p.w_r.value.data());
    matvec_acc(&mut pre_r, h, p.u_r.value.data());
    let r: Vec<f64> = pre_r.iter().map(|&v| sigmoid(v)).collect();

    let mut pre_z = p.b_z.value.data().to_vec();
    matvec_acc(&mut pre_z, x, p.w_z.value.data());
    matvec_acc(&mut pre_z, h, p.u_z.value.data());
    let z: Vec<f64> = pre_z.iter().map(|&v| sigmoid(v)).collect();

    let mut unh = vec![0.0; hid];
    matvec_acc(&mut unh, h, p.u_n.value.data());
    let mut pre_n = p.b_n.value.data().to_vec();
    matvec_acc(&mut pre_n, x, p.w_n.value.data());
    for i in 0..hid {
        pre_n[i] += r[i] * unh[i];
    }
    let n: Vec<f64> = pre_n.iter().map(|&v| v.tanh()).collect();

    let h_new: Vec<f64> = (0..hid).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
    let cache = GruStepCache {
        h_prev: h.to_vec(),
        r,
        z,
        n,
        unh,
    };
    (h_new, cache)
}

/// Backward through one step. Accumulates parameter gradients on `p`,
/// adds the input gradient into `dx`, and returns the gradient on h_prev.
fn gru_step_backward(
    p: &mut GruCellParams,
    x: &[f64],
    cache: &GruStepCache,
    dh: &[f64],
    dx: &mut [f64],
) -> Vec<f64> {
    let hid = p.hidden_size();
    let mut dpre_r = vec![0.0; hid];
    let mut dpre_z = vec![0.0; hid];
    let mut dpre_n = vec![0.0; hid];
    let mut dunh = vec![0.0; hid];
    let mut dh_prev = vec![0.0; hid];
    for i in 0..hid {
        let (r, z, n) = (cache.r[i], cache.z[i], cache.n[i]);
        let dz = dh[i] * (cache.h_prev[i] - n);
        let dn = dh[i] * (1.0 - z);
        dh_prev[i] = dh[i] * z;
        let dpn = dn * (1.0 - n * n);
        dpre_n[i] = dpn;
        let dr = dpn * cache.unh[i];
        dunh[i] = dpn * r;
        dpre_z[i] = dz * z * (1.0 - z);
        dpre_r[i] = dr * r * (1.0 - r);
    }
    outer_acc(p.w_r.grad.data_mut(), x, &dpre_r);
    outer_acc(p.u_r.grad.data_mut(), &cache.h_prev, &dpre_r);
    outer_acc(p.w_z.grad.data_mut(), x, &dpre_z);
    outer_acc(p.u_z.grad.data_mut(), &cache.h_prev, &dpre_z);
    outer_acc(p.w_n.grad.data_mut(), x, &dpre_n);
    outer_acc(p.u_n.grad.data_mut(), &cache.h_prev, &dunh);
    for i in 0..hid {
        p.b_r.grad.data_mut()[i] += dpre_r[i];
        p.b_z.grad.data_mut()[i] += dpre_z[i];
        p.b_n.grad.data_mut()[i] += dpre_n[i];
    }
    matvec_t_acc(dx, p.w_r.value.data(), &dpre_r);
    matvec_t_acc(dx, p.w_z.value.data(), &dpre_z);
    matvec_t_acc(dx, p.w_n.value.data(), &dpre_n);
    matvec_t_acc(&mut dh_prev, p.u_r.value.data(), &dpre_r);
    matvec_t_acc(&mut dh_prev, p.u_z.value.data(), &dpre_z);
    matvec_t_acc(&mut dh_prev, p.u_n.value.data(), &dunh);
    dh_prev
}

/// A GRU unrolled over a sequence in one direction.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub cell: GruCellParams,
}

pub struct GruSeqCache {
    xs: Tensor,
    steps: Vec<GruStepCache>,
}

impl GruLayer {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            cell: GruCellParams::new(input, hidden, rng),
        }
    }

    /// Runs the cell over `xs` rows starting from a zero state; returns the
    /// hidden state after every step.
    pub fn forward_seq(&self, xs: &Tensor) -> (Tensor, GruSeqCache) {
        let t_len = xs.dim(0);
        let hid = self.cell.hidden_size();
        let mut h = vec![0.0; hid];
        let mut out = Tensor::zeros(&[t_len, hid]);
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (h_new, cache) = gru_step(xs.row(t), &h, &self.cell);
            out.row_mut(t).copy_from_slice(&h_new);
            steps.push(cache);
            h = h_new;
        }
        (
            out,
            GruSeqCache {
                xs: xs.clone(),
                steps,
            },
        )
    }

    /// Backward over the whole sequence. `dhs` carries the per-step output
    /// gradients; `dh_final` is an extra gradient on the last hidden state.
    pub fn backward_seq(&mut self, cache: &GruSeqCache, dhs: &Tensor, dh_final: &[f64]) -> Tensor {
        let t_len = cache.steps.len();
        let input = self.cell.input_size();
        let mut dxs = Tensor::zeros(&[t_len, input]);
        let mut carry = dh_final.to_vec();
        for t in (0..t_len).rev() {
            let mut dh = dhs.row(t).to_vec();
            for (a, b) in dh.iter_mut().zip(carry.iter()) {
                *a += b;
            }
            carry = gru_step_backward(
                &mut self.cell,
                cache.xs.row(t),
                &cache.steps[t],
                &dh,
                dxs.row_mut(t),
            );
        }
        dxs
    }
}

/// One encoder level: forward GRU plus an optional backward GRU whose
/// per-step outputs are concatenated.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub fwd: GruLayer,
    pub bwd: Option<GruLayer>,
}

pub struct BiGruCache {
    fwd: GruSeqCache,
    bwd: Option<GruSeqCache>,
}

impl BiGru {
    pub fn new(input: usize, hidden: usize, bidirectional: bool, rng: &mut Rng) -> Self {
        Self {
            fwd: GruLayer::new(input, hidden, rng),
            bwd: bidirectional.then(|| GruLayer::new(input, hidden, rng)),
        }
    }

    fn hidden_size(&self) -> usize {
        self.fwd.cell.hidden_size()
    }

    fn final_len(&self) -> usize {
        let d = if self.bwd.is_some() { 2 } else { 1 };
        d * self.hidden_size()
    }

    /// Output is `[T x D*hidden]`; column blocks are [forward, backward].
    pub fn forward_seq(&self, xs: &Tensor) -> (Tensor, BiGruCache) {
        let (fwd_out, fwd_cache) = self.fwd.forward_seq(xs);
        match &self.bwd {
            None => (
                fwd_out,
                BiGruCache {
                    fwd: fwd_cache,
                    bwd: None,
                },
            ),
            Some(bwd) => {
                let reversed = reverse_rows(xs);
                let (bwd_rev_out, bwd_cache) = bwd.forward_seq(&reversed);
                let bwd_out = reverse_rows(&bwd_rev_out);
                let t_len = xs.dim(0);
                let hid = self.hidden_size();
                let mut out = Tensor::zeros(&[t_len, 2 * hid]);
                for t in 0..t_len {
                    out.row_mut(t)[..hid].copy_from_slice(fwd_out.row(t));
                    out.row_mut(t)[hid..].copy_from_slice(bwd_out.row(t));
                }
                (
                    out,
                    BiGruCache {
                        fwd: fwd_cache,
                        bwd: Some(bwd_cache),
                    },
                )
            }
        }
    }

    /// Final state(s) in bridge order: forward last step, then (for the
    /// bidirectional case) the backward pass state after consuming the whole
    /// sequence, which sits at row 0 of the combined output.
    pub fn final_state(&self, outputs: &Tensor) -> Vec<f64> {
        let t_len = outputs.dim(0);
        let hid = self.hidden_size();
        match self.bwd {
            None => outputs.row(t_len - 1).to_vec(),
            Some(_) => {
                let mut v = Vec::with_capacity(2 * hid);
                v.extend_from_slice(&outputs.row(t_len - 1)[..hid]);
                v.extend_from_slice(&outputs.row(0)[hid..]);
                v
            }
        }
    }

    /// `dfinal` matches the [`Self::final_state`] layout.
    pub fn backward_seq(&mut self, cache: &BiGruCache, dhs: &Tensor, dfinal: &[f64]) -> Tensor {
        let hid = self.hidden_size();
        match (&mut self.bwd, &cache.bwd) {
            (None, _) => self.fwd.backward_seq(&cache.fwd, dhs, dfinal),
            (Some(bwd), Some(bwd_cache)) => {
                let t_len = dhs.dim(0);
                let mut dfwd = Tensor::zeros(&[t_len, hid]);
                let mut dbwd = Tensor::zeros(&[t_len, hid]);
                for t in 0..t_len {
                    dfwd.row_mut(t).copy_from_slice(&dhs.row(t)[..hid]);
                    dbwd.row_mut(t).copy_from_slice(&dhs.row(t)[hid..]);
                }
                let dxs_fwd = self.fwd.backward_seq(&cache.fwd, &dfwd, &dfinal[..hid]);
                let dbwd_rev = reverse_rows(&dbwd);
                let dxs_bwd_rev = bwd.backward_seq(bwd_cache, &dbwd_rev, &dfinal[hid..]);
                let dxs_bwd = reverse_rows(&dxs_bwd_rev);
                dxs_fwd.add(&dxs_bwd).expect("same input shape")
            }
            _ => unreachable!("cache direction mismatch"),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.fwd.cell.visit(&format!("{prefix}.fwd"), f);
        if let Some(bwd) = &self.bwd {
            bwd.cell.visit(&format!("{prefix}.bwd"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.fwd.cell.visit_mut(&format!("{prefix}.fwd"), f);
        if let Some(bwd) = &mut self.bwd {
            bwd.cell.visit_mut(&format!("{prefix}.bwd"), f);
        }
    }
}

fn reverse_rows(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.dim(0), x.dim(1));
    let mut out = Tensor::zeros(&[rows, cols]);
    for t in 0..rows {
        out.row_mut(t).copy_from_slice(x.row(rows - 1 - t));
    }
    out
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Per-step embedding FC, GRU stack, and the bridge FC that maps the final
/// hidden state(s) to the decoder's initial state.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub embed: Linear,
    pub layers: Vec<BiGru>,
    pub bridge: Linear,
}

pub struct EncoderCache {
    input: Tensor,
    layer_caches: Vec<BiGruCache>,
    final_state: Vec<f64>,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let embed = Linear::new(cfg.encoder_input_channels(), cfg.enc_embedding_size, rng);
        let d = if cfg.enc_bidirectional { 2 } else { 1 };
        let mut layers = Vec::with_capacity(cfg.enc_num_layers);
        let mut in_size = cfg.enc_embedding_size;
        for _ in 0..cfg.enc_num_layers {
            layers.push(BiGru::new(
                in_size,
                cfg.enc_hidden_size,
                cfg.enc_bidirectional,
                rng,
            ));
            in_size = d * cfg.enc_hidden_size;
        }
        let bridge = Linear::new(d * cfg.enc_hidden_size, cfg.dec_hidden_size, rng);
        Self {
            embed,
            layers,
            bridge,
        }
    }

    /// Returns per-step encoder outputs and the decoder's initial state.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>, EncoderCache)> {
        let embedded = self.embed.forward(x)?;
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut current = embedded;
        for layer in &self.layers {
            let (out, cache) = layer.forward_seq(&current);
            layer_caches.push(cache);
            current = out;
        }
        let last_layer = self.layers.last().expect("at least one layer");
        let final_state = last_layer.final_state(&current);
        let dec_init = self.bridge.forward_vec(&final_state);
        let cache = EncoderCache {
            input: x.clone(),
            layer_caches,
            final_state,
        };
        Ok((current, dec_init, cache))
    }

    /// `denc_outputs` is the gradient on the top layer's per-step outputs;
    /// `ddec_init` flows back through the bridge. Returns the gradient on
    /// the encoder input.
    pub fn backward(
        &mut self,
        cache: &EncoderCache,
        denc_outputs: &Tensor,
        ddec_init: &[f64],
    ) -> Result<Tensor> {
        let dfinal = self.bridge.backward_vec(&cache.final_state, ddec_init);
        let n_layers = self.layers.len();
        let mut dhs = denc_outputs.clone();
        for l in (0..n_layers).rev() {
            // Only the top layer feeds the bridge.
            let dfinal_slice: Vec<f64> = if l == n_layers - 1 {
                dfinal.clone()
            } else {
                vec![0.0; self.layers[l].final_len()]
            };
            dhs = self.layers[l].backward_seq(&cache.layer_caches[l], &dhs, &dfinal_slice);
        }
        self.embed.backward(&cache.input, &dhs)
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.embed.visit(&format!("{prefix}.embed"), f);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}.gru{i}"), f);
        }
        self.bridge.visit(&format!("{prefix}.bridge"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.embed.visit_mut(&format!("{prefix}.embed"), f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.gru{i}"), f);
        }
        self.bridge.visit_mut(&format!("{prefix}.bridge"), f);
    }
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// Additive FC attention: each head scores `[query, enc_step]` with a
/// single fully connected layer, weights are a softmax over steps, and the
/// per-head contexts are averaged.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heads: Vec<Linear>,
}

pub struct AttentionCache {
    query: Vec<f64>,
    /// Per head: softmax weights over the steps.
    weights: Vec<Vec<f64>>,
}

impl Attention {
    pub fn new(query_size: usize, enc_width: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            heads: (0..heads)
                .map(|_| Linear::new(query_size + enc_width, 1, rng))
                .collect(),
        }
    }

    /// Returns the mean-over-heads context vector and the per-head weights.
    pub fn forward(
        &self,
        query: &[f64],
        enc_outputs: &Tensor,
    ) -> Result<(Vec<f64>, Tensor, AttentionCache)> {
        let t_len = enc_outputs.dim(0);
        if t_len == 0 {
            return Err(Error::Shape {
                op: "attend",
                detail: "empty encoder output".into(),
            });
        }
        let width = enc_outputs.dim(1);
        let n_heads = self.heads.len();
        let mut context = vec![0.0; width];
        let mut weights_out = Tensor::zeros(&[n_heads, t_len]);
        let mut weights = Vec::with_capacity(n_heads);
        let mut cat = vec![0.0; query.len() + width];
        cat[..query.len()].copy_from_slice(query);
        for (hi, head) in self.heads.iter().enumerate() {
            let mut scores = Vec::with_capacity(t_len);
            for t in 0..t_len {
                cat[query.len()..].copy_from_slice(enc_outputs.row(t));
                scores.push(head.forward_vec(&cat)[0]);
            }
            let w = softmax(&scores);
            for t in 0..t_len {
                axpy(&mut context, w[t] / n_heads as f64, enc_outputs.row(t));
            }
            weights_out.row_mut(hi).copy_from_slice(&w);
            weights.push(w);
        }
        let cache = AttentionCache {
            query: query.to_vec(),
            weights,
        };
        Ok((context, weights_out, cache))
    }

    /// Backward: accumulates into `denc_outputs` and returns the gradient on
    /// the query.
    pub fn backward(
        &mut self,
        cache: &AttentionCache,
        enc_outputs: &Tensor,
        dcontext: &[f64],
        denc_outputs: &mut Tensor,
    ) -> Result<Vec<f64>> {
        let t_len = enc_outputs.dim(0);
        let width = enc_outputs.dim(1);
        let q_len = cache.query.len();
        let n_heads = self.heads.len() as f64;
        let mut dquery = vec![0.0; q_len];
        let mut cat = vec![0.0; q_len + width];
        cat[..q_len].copy_from_slice(&cache.query);
        for (hi, head) in self.heads.iter_mut().enumerate() {
            let w = &cache.weights[hi];
            // Context path: context += (w_t / heads) * enc_t.
            let mut dw = vec![0.0; t_len];
            for t in 0..t_len {
                dw[t] = dot(dcontext, enc_outputs.row(t)) / n_heads;
                axpy(denc_outputs.row_mut(t), w[t] / n_heads, dcontext);
            }
            let dscores = softmax_backward(w, &dw);
            for t in 0..t_len {
                cat[q_len..].copy_from_slice(enc_outputs.row(t));
                let dcat = head.backward_vec(&cat, &[dscores[t]]);
                for i in 0..q_len {
                    dquery[i] += dcat[i];
                }
                for i in 0..width {
                    denc_outputs.row_mut(t)[i] += dcat[q_len + i];
                }
            }
        }
        Ok(dquery)
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        for (i, head) in self.heads.iter().enumerate() {
            head.visit(&format!("{prefix}.head{i}"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        for (i, head) in self.heads.iter_mut().enumerate() {
            head.visit_mut(&format!("{prefix}.head{i}"), f);
        }
    }
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// GRU decoder with attention. The first step embeds the raw force vector
/// at the window's final index; later steps embed the previous prediction.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub embed_force: Linear,
    pub embed_feedback: Linear,
    pub gru: GruCellParams,
    pub output: Linear,
}

struct DecoderStep {
    gru_input: Vec<f64>,
    gru: GruStepCache,
    h: Vec<f64>,
    attn: AttentionCache,
}

pub struct DecoderCache {
    last_input: Vec<f64>,
    steps: Vec<DecoderStep>,
    preds: Tensor,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let enc_width = cfg.encoder_output_width();
        Self {
            embed_force: Linear::new(cfg.input_channels, cfg.dec_embedding_size, rng),
            embed_feedback: Linear::new(cfg.dec_output_size, cfg.dec_embedding_size, rng),
            gru: GruCellParams::new(cfg.dec_embedding_size + enc_width, cfg.dec_hidden_size, rng),
            output: Linear::new(cfg.dec_hidden_size, cfg.dec_output_size, rng),
        }
    }

    pub fn forward(
        &self,
        attention: &Attention,
        last_input: &[f64],
        dec_init: &[f64],
        enc_outputs: &Tensor,
        target_win: usize,
    ) -> Result<(Tensor, DecoderCache)> {
        let out_size = self.output.output_size();
        let mut preds = Tensor::zeros(&[target_win, out_size]);
        let mut steps = Vec::with_capacity(target_win);
        let mut h = dec_init.to_vec();
        for step in 0..target_win {
            let embedded = if step == 0 {
                self.embed_force.forward_vec(last_input)
            } else {
                self.embed_feedback.forward_vec(preds.row(step - 1))
            };
            // On the first step h still equals the bridged encoder state.
            let (context, _w, attn_cache) = attention.forward(&h, enc_outputs)?;
            let mut gru_input = Vec::with_capacity(embedded.len() + context.len());
            gru_input.extend_from_slice(&embedded);
            gru_input.extend_from_slice(&context);
            let (h_new, gru_cache) = gru_step(&gru_input, &h, &self.gru);
            let y = self.output.forward_vec(&h_new);
            preds.row_mut(step).copy_from_slice(&y);
            steps.push(DecoderStep {
                gru_input,
                gru: gru_cache,
                h: h_new.clone(),
                attn: attn_cache,
            });
            h = h_new;
        }
        Ok((
            preds.clone(),
            DecoderCache {
                last_input: last_input.to_vec(),
                steps,
                preds,
            },
        ))
    }

    /// Returns (dlast_input, ddec_init) and accumulates into `denc_outputs`.
    pub fn backward(
        &mut self,
        attention: &mut Attention,
        cache: &DecoderCache,
        enc_outputs: &Tensor,
        dpreds: &Tensor,
        denc_outputs: &mut Tensor,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let target_win = cache.steps.len();
        let emb_size = self.embed_force.output_size();
        let out_size = self.output.output_size();
        let mut dfeedback = vec![vec![0.0; out_size]; target_win];
        let mut dh_carry = vec![0.0; self.gru.hidden_size()];
        let mut dlast_input = vec![0.0; cache.last_input.len()];
        for step in (0..target_win).rev() {
            let s = &cache.steps[step];
            let mut dy = dpreds.row(step).to_vec();
            for (a, b) in dy.iter_mut().zip(dfeedback[step].iter()) {
                *a += b;
            }
            let mut dh = self.output.backward_vec(&s.h, &dy);
            for (a, b) in dh.iter_mut().zip(dh_carry.iter()) {
                *a += b;
            }
            let mut dgru_input = vec![0.0; s.gru_input.len()];
            let mut dh_prev =
                gru_step_backward(&mut self.gru, &s.gru_input, &s.gru, &dh, &mut dgru_input);
            let dembedded = &dgru_input[..emb_size];
            let dcontext = &dgru_input[emb_size..];
            let dquery = attention.backward(&s.attn, enc_outputs, dcontext, denc_outputs)?;
            // The attention query was the hidden state entering this step.
            for (a, b) in dh_prev.iter_mut().zip(dquery.iter()) {
                *a += b;
            }
            if step == 0 {
                let d = self.embed_force.backward_vec(&cache.last_input, dembedded);
                for (a, b) in dlast_input.iter_mut().zip(d.iter()) {
                    *a += b;
                }
            } else {
                let d = self
                    .embed_feedback
                    .backward_vec(cache.preds.row(step - 1), dembedded);
                for (a, b) in dfeedback[step - 1].iter_mut().zip(d.iter()) {
                    *a += b;
                }
            }
            dh_carry = dh_prev;
        }
        Ok((dlast_input, dh_carry))
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.embed_force.visit(&format!("{prefix}.embed_force"), f);
        self.embed_feedback
            .visit(&format!("{prefix}.embed_feedback"), f);
        self.gru.visit(&format!("{prefix}.gru"), f);
        self.output.visit(&format!("{prefix}.output"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.embed_force
            .visit_mut(&format!("{prefix}.embed_force"), f);
        self.embed_feedback
            .visit_mut(&format!("{prefix}.embed_feedback"), f);
        self.gru.visit_mut(&format!("{prefix}.gru"), f);
        self.output.visit_mut(&format!("{prefix}.output"), f);
    }
}

// ---------------------------------------------------------------------------
// Full model and baselines
// ---------------------------------------------------------------------------

/// The assembled sequence-to-sequence model.
#[derive(Debug, Clone)]
pub struct Seq2SeqState {
    pub asl: Option<AslState>,
    pub encoder: Encoder,
    pub attention: Attention,
    pub decoder: Decoder,
}

pub struct Seq2SeqCache {
    asl: Option<crate::asl::AslCache>,
    enc_outputs: Tensor,
    encoder: EncoderCache,
    decoder: DecoderCache,
}

impl Seq2SeqState {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let asl = if cfg.use_asl {
            Some(AslState::new(
                cfg.feature_win,
                cfg.input_channels,
                &cfg.asl,
                rng,
            )?)
        } else {
            None
        };
        let encoder = Encoder::new(cfg, rng);
        let attention = Attention::new(
            cfg.dec_hidden_size,
            cfg.encoder_output_width(),
            cfg.attn_heads,
            rng,
        );
        let decoder = Decoder::new(cfg, rng);
        Ok(Self {
            asl,
            encoder,
            attention,
            decoder,
        })
    }

    pub fn forward(
        &self,
        window: &Tensor,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, Seq2SeqCache)> {
        if window.rank() != 2
            || window.dim(0) != cfg.feature_win
            || window.dim(1) != cfg.input_channels
        {
            return Err(Error::Shape {
                op: "model_forward",
                detail: format!(
                    "expected [{} x {}], got {:?}",
                    cfg.feature_win,
                    cfg.input_channels,
                    window.shape()
                ),
            });
        }
        let (enc_input, asl_cache) = match &self.asl {
            Some(asl) => {
                let (y, cache) = asl.forward(window, &cfg.asl, mode, rng)?;
                (y, Some(cache))
            }
            None => (window.clone(), None),
        };
        let (enc_outputs, dec_init, enc_cache) = self.encoder.forward(&enc_input)?;
        let last_input = window.row(cfg.feature_win - 1);
        let (preds, dec_cache) = self.decoder.forward(
            &self.attention,
            last_input,
            &dec_init,
            &enc_outputs,
            cfg.target_win,
        )?;
        Ok((
            preds,
            Seq2SeqCache {
                asl: asl_cache,
                enc_outputs,
                encoder: enc_cache,
                decoder: dec_cache,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cfg: &ModelConfig,
        cache: &Seq2SeqCache,
        dpreds: &Tensor,
    ) -> Result<Tensor> {
        let mut denc_outputs = Tensor::zeros(cache.enc_outputs.shape());
        let (dlast_input, ddec_init) = self.decoder.backward(
            &mut self.attention,
            &cache.decoder,
            &cache.enc_outputs,
            dpreds,
            &mut denc_outputs,
        )?;
        let denc_input = self
            .encoder
            .backward(&cache.encoder, &denc_outputs, &ddec_init)?;
        let mut dwindow = match (&mut self.asl, &cache.asl) {
            (Some(asl), Some(asl_cache)) => asl.backward(&cfg.asl, asl_cache, &denc_input)?,
            _ => denc_input,
        };
        // The decoder's first step reads the raw final force row directly.
        let last_row = dwindow.dim(0) - 1;
        for (a, b) in dwindow.row_mut(last_row).iter_mut().zip(dlast_input.iter()) {
            *a += b;
        }
        Ok(dwindow)
    }

    /// Applies `f` to every parameter, in manifest order.
    pub fn visit_all(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        if let Some(asl) = &mut self.asl {
            asl.visit_mut("asl", &mut |_, p| f(p));
        }
        self.encoder.visit_mut("encoder", &mut |_, p| f(p));
        self.attention.visit_mut("attention", &mut |_, p| f(p));
        self.decoder.visit_mut("decoder", &mut |_, p| f(p));
    }
}

/// One FC applied to the flattened window.
#[derive(Debug, Clone)]
pub struct LinearBaseline {
    pub fc: Linear,
    feature_win: usize,
    channels: usize,
    target_win: usize,
    out_size: usize,
}

impl LinearBaseline {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            fc: Linear::new(
                cfg.feature_win * cfg.input_channels,
                cfg.target_win * cfg.dec_output_size,
                rng,
            ),
            feature_win: cfg.feature_win,
            channels: cfg.input_channels,
            target_win: cfg.target_win,
            out_size: cfg.dec_output_size,
        }
    }

    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        let flat = Tensor::new(
            vec![1, self.feature_win * self.channels],
            window.data().to_vec(),
        )?;
        let y = self.fc.forward(&flat)?;
        y.reshape(vec![self.target_win, self.out_size])
    }

    pub fn backward(&mut self, window: &Tensor, dpreds: &Tensor) -> Result<Tensor> {
        let flat = Tensor::new(
            vec![1, self.feature_win * self.channels],
            window.data().to_vec(),
        )?;
        let dflat = Tensor::new(
            vec![1, self.target_win * self.out_size],
            dpreds.data().to_vec(),
        )?;
        let dx = self.fc.backward(&flat, &dflat)?;
        dx.reshape(vec![self.feature_win, self.channels])
    }
}

/// Linear applied to the last-step-subtracted window, plus a learned
/// projection of the last step back onto the output.
#[derive(Debug, Clone)]
pub struct NLinearBaseline {
    pub fc: Linear,
    pub shift: Linear,
    feature_win: usize,
    channels: usize,
    target_win: usize,
    out_size: usize,
}

impl NLinearBaseline {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            fc: Linear::new(
                cfg.feature_win * cfg.input_channels,
                cfg.target_win * cfg.dec_output_size,
                rng,
            ),
            shift: Linear::new(cfg.input_channels, cfg.target_win * cfg.dec_output_size, rng),
            feature_win: cfg.feature_win,
            channels: cfg.input_channels,
            target_win: cfg.target_win,
            out_size: cfg.dec_output_size,
        }
    }

    fn centered(&self, window: &Tensor) -> Tensor {
        let last = window.row(self.feature_win - 1).to_vec();
        let mut out = window.clone();
        for t in 0..self.feature_win {
            for (v, l) in out.row_mut(t).iter_mut().zip(last.iter()) {
                *v -= l;
            }
        }
        out
    }

    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        let centered = self.centered(window);
        let flat = Tensor::new(
            vec![1, self.feature_win * self.channels],
            centered.into_data(),
        )?;
        let mut y = self.fc.forward(&flat)?.into_data();
        let last = window.row(self.feature_win - 1);
        let shift = self.shift.forward_vec(last);
        for (a, b) in y.iter_mut().zip(shift.iter()) {
            *a += b;
        }
        Tensor::new(vec![self.target_win, self.out_size], y)
    }

    pub fn backward(&mut self, window: &Tensor, dpreds: &Tensor) -> Result<Tensor> {
        let centered = self.centered(window);
        let flat = Tensor::new(
            vec![1, self.feature_win * self.channels],
            centered.into_data(),
        )?;
        let dflat = Tensor::new(
            vec![1, self.target_win * self.out_size],
            dpreds.data().to_vec(),
        )?;
        let dcentered = self
            .fc
            .backward(&flat, &dflat)?
            .reshape(vec![self.feature_win, self.channels])?;
        let last = window.row(self.feature_win - 1);
        let dshift_in = self.shift.backward_vec(last, dpreds.data());
        let mut dx = dcentered.clone();
        // Every centered row subtracts the last row, so its gradient picks
        // up the negated column sums; the shift path adds its own term.
        let mut dlast = vec![0.0; self.channels];
        for t in 0..self.feature_win {
            for c in 0..self.channels {
                dlast[c] -= dcentered.row(t)[c];
            }
        }
        for c in 0..self.channels {
            dlast[c] += dshift_in[c];
        }
        let last_row = self.feature_win - 1;
        for c in 0..self.channels {
            dx.row_mut(last_row)[c] += dlast[c];
        }
        Ok(dx)
    }
}

/// Caches for the polymorphic forward/backward pair.
pub enum ModelCache {
    Seq2Seq(Box<Seq2SeqCache>),
    Flat(Tensor),
}

/// A trainable model of any supported class.
#[derive(Debug, Clone)]
pub enum Model {
    Seq2Seq(Seq2SeqState),
    Linear(LinearBaseline),
    NLinear(NLinearBaseline),
}

impl Model {
    pub fn new(class: ModelClass, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match class {
            ModelClass::Seq2Seq => Model::Seq2Seq(Seq2SeqState::new(cfg, rng)?),
            ModelClass::Linear => Model::Linear(LinearBaseline::new(cfg, rng)),
            ModelClass::NLinear => Model::NLinear(NLinearBaseline::new(cfg, rng)),
        })
    }

    pub fn class(&self) -> ModelClass {
        match self {
            Model::Seq2Seq(_) => ModelClass::Seq2Seq,
            Model::Linear(_) => ModelClass::Linear,
            Model::NLinear(_) => ModelClass::NLinear,
        }
    }

    pub fn forward(
        &self,
        window: &Tensor,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, ModelCache)> {
        match self {
            Model::Seq2Seq(m) => {
                let (y, cache) = m.forward(window, cfg, mode, rng)?;
                Ok((y, ModelCache::Seq2Seq(Box::new(cache))))
            }
            Model::Linear(m) => Ok((m.forward(window)?, ModelCache::Flat(window.clone()))),
            Model::NLinear(m) => Ok((m.forward(window)?, ModelCache::Flat(window.clone()))),
        }
    }

    /// Eval-mode prediction without cache bookkeeping.
    pub fn predict(&self, window: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
        let mut rng = Rng::new(0);
        Ok(self.forward(window, cfg, Mode::Eval, &mut rng)?.0)
    }

    pub fn backward(
        &mut self,
        cfg: &ModelConfig,
        cache: &ModelCache,
        dpreds: &Tensor,
    ) -> Result<Tensor> {
        match (self, cache) {
            (Model::Seq2Seq(m), ModelCache::Seq2Seq(c)) => m.backward(cfg, c, dpreds),
            (Model::Linear(m), ModelCache::Flat(window)) => m.backward(window, dpreds),
            (Model::NLinear(m), ModelCache::Flat(window)) => m.backward(window, dpreds),
            _ => Err(Error::Shape {
                op: "model_backward",
                detail: "cache does not match model class".into(),
            }),
        }
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Parameter)) {
        match self {
            Model::Seq2Seq(m) => {
                if let Some(asl) = &m.asl {
                    asl.visit("asl", f);
                }
                m.encoder.visit("encoder", f);
                m.attention.visit("attention", f);
                m.decoder.visit("decoder", f);
            }
            Model::Linear(m) => m.fc.visit("linear.fc", f),
            Model::NLinear(m) => {
                m.fc.visit("nlinear.fc", f);
                m.shift.visit("nlinear.shift", f);
            }
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        match self {
            Model::Seq2Seq(m) => {
                if let Some(asl) = &mut m.asl {
                    asl.visit_mut("asl", f);
                }
                m.encoder.visit_mut("encoder", f);
                m.attention.visit_mut("attention", f);
                m.decoder.visit_mut("decoder", f);
            }
            Model::Linear(m) => m.fc.visit_mut("linear.fc", f),
            Model::NLinear(m) => {
                m.fc.visit_mut("nlinear.fc", f);
                m.shift.visit_mut("nlinear.shift", f);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }
}

/// Exact parameter count for a class/config pair; a pure function of the
/// configuration.
pub fn count_params(class: ModelClass, cfg: &ModelConfig) -> Result<usize> {
    let mut throwaway = Rng::new(0);
    Ok(Model::new(class, cfg, &mut throwaway)?.param_count())
}
