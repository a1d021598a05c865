//! Forward pass and hand-written backpropagation.
//!
//! Encoder: forward and backward GRUs over the embedded source, concatenated
//! per position into `h_i = [→h_i; ←h_i]`. Decoder step `t`:
//!
//! ```text
//! a_t[i] = v · tanh(W_a s_{t-1} + U_a h_i)
//! α_t    = softmax(a_t)
//! c_t    = Σ_i α_t[i] h_i
//! s_t    = GRU([E_y(y_{t-1}); c_t], s_{t-1})
//! logits = W_o [s_t; c_t; E_y(y_{t-1})] + b_o
//! ```

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use super::params::{GruParams, NmtParams};
use super::{NmtError, EOS, START};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|a| (a - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(logits: &Array1<f64>, idx: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits[idx] - lse
}

/// `m += a ⊗ b`.
fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

fn concat(parts: &[ArrayView1<f64>]) -> Array1<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Array1::zeros(n);
    let mut off = 0;
    for p in parts {
        out.slice_mut(s![off..off + p.len()]).assign(p);
        off += p.len();
    }
    out
}

/// Cached activations of one GRU step.
#[derive(Debug, Clone)]
pub(crate) struct GruStep {
    x: Array1<f64>,
    h_prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    cand: Array1<f64>,
    pub(crate) h: Array1<f64>,
}

fn gru_forward(p: &GruParams, x: Array1<f64>, h_prev: Array1<f64>) -> GruStep {
    let z = (p.w_z.dot(&x) + p.u_z.dot(&h_prev) + &p.b_z).mapv(sigmoid);
    let r = (p.w_r.dot(&x) + p.u_r.dot(&h_prev) + &p.b_r).mapv(sigmoid);
    let rh = &r * &h_prev;
    let cand = (p.w_h.dot(&x) + p.u_h.dot(&rh) + &p.b_h).mapv(f64::tanh);
    let h = (1.0 - &z) * &h_prev + &z * &cand;
    GruStep {
        x,
        h_prev,
        z,
        r,
        cand,
        h,
    }
}

/// Accumulates parameter gradients into `g`; returns `(dx, dh_prev)`.
fn gru_backward(
    p: &GruParams,
    st: &GruStep,
    dh: &Array1<f64>,
    g: &mut GruParams,
) -> (Array1<f64>, Array1<f64>) {
    let d_cand = dh * &st.z;
    let dz = dh * &(&st.cand - &st.h_prev);
    let mut dh_prev = dh * &(1.0 - &st.z);

    let da_h = &d_cand * &st.cand.mapv(|c| 1.0 - c * c);
    let rh = &st.r * &st.h_prev;
    add_outer(&mut g.w_h, &da_h, st.x.view());
    add_outer(&mut g.u_h, &da_h, rh.view());
    g.b_h += &da_h;
    let d_rh = p.u_h.t().dot(&da_h);
    let dr = &d_rh * &st.h_prev;
    dh_prev += &(&d_rh * &st.r);
    let mut dx = p.w_h.t().dot(&da_h);

    let da_z = &dz * &st.z.mapv(|z| z * (1.0 - z));
    add_outer(&mut g.w_z, &da_z, st.x.view());
    add_outer(&mut g.u_z, &da_z, st.h_prev.view());
    g.b_z += &da_z;
    dx += &p.w_z.t().dot(&da_z);
    dh_prev += &p.u_z.t().dot(&da_z);

    let da_r = &dr * &st.r.mapv(|r| r * (1.0 - r));
    add_outer(&mut g.w_r, &da_r, st.x.view());
    add_outer(&mut g.u_r, &da_r, st.h_prev.view());
    g.b_r += &da_r;
    dx += &p.w_r.t().dot(&da_r);
    dh_prev += &p.u_r.t().dot(&da_r);

    (dx, dh_prev)
}

/// Encoder output: `h_1..h_n`, each of width `2 * hidden`.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub states: Vec<Array1<f64>>,
    fwd: Vec<GruStep>,
    // Indexed by source position, not by processing order.
    bwd: Vec<GruStep>,
    /// `U_a h_i`, reused by every decoder step.
    keys: Vec<Array1<f64>>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Forward-direction states `→h_1..→h_n`.
    pub fn forward_states(&self) -> Vec<Array1<f64>> {
        self.fwd.iter().map(|s| s.h.clone()).collect()
    }

    /// Backward-direction states `←h_1..←h_n`, by position.
    pub fn backward_states(&self) -> Vec<Array1<f64>> {
        self.bwd.iter().map(|s| s.h.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AttentionStep {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Array1<f64>,
    /// `tanh(W_a s_prev + U_a h_i)` per position.
    pub(crate) hidden: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct DecodeStep {
    pub logits: Array1<f64>,
    pub state: Array1<f64>,
    pub attention: AttentionStep,
}

/// Inverted-dropout rates; zero disables a site.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dropout {
    /// Applied to source and target embedding lookups.
    pub embedding: f64,
    /// Applied to the readout vector feeding the output layer.
    pub hidden: f64,
}

impl Dropout {
    pub fn is_off(&self) -> bool {
        self.embedding <= 0.0 && self.hidden <= 0.0
    }
}

fn dropout_mask<R: Rng>(rng: &mut R, n: usize, rate: f64) -> Option<Array1<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Array1::from_shape_fn(n, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    }))
}

fn masked(v: Array1<f64>, mask: &Option<Array1<f64>>) -> Array1<f64> {
    match mask {
        Some(m) => v * m,
        None => v,
    }
}

struct StepTrace {
    s_prev: Array1<f64>,
    y_prev: usize,
    emb_mask: Option<Array1<f64>>,
    att: AttentionStep,
    gru: GruStep,
    readout: Array1<f64>,
    readout_mask: Option<Array1<f64>>,
    probs: Array1<f64>,
    target: usize,
}

struct SourceMasks {
    emb: Vec<Option<Array1<f64>>>,
}

impl NmtParams {
    fn check_src(&self, src: &[usize]) -> Result<(), NmtError> {
        if src.is_empty() {
            return Err(NmtError::EmptySource);
        }
        match src.iter().find(|&&id| id >= self.dims.src_vocab) {
            Some(&id) => Err(NmtError::OutOfRange {
                id,
                vocab: self.dims.src_vocab,
            }),
            None => Ok(()),
        }
    }

    fn check_tgt_id(&self, id: usize) -> Result<(), NmtError> {
        if id >= self.dims.tgt_vocab {
            Err(NmtError::OutOfRange {
                id,
                vocab: self.dims.tgt_vocab,
            })
        } else {
            Ok(())
        }
    }

    pub fn encode(&self, src: &[usize]) -> Result<EncodedSource, NmtError> {
        self.check_src(src)?;
        Ok(self.encode_masked(src, None))
    }

    fn encode_masked(&self, src: &[usize], masks: Option<&SourceMasks>) -> EncodedSource {
        let h = self.dims.hidden;
        let n = src.len();
        let embed = |i: usize| {
            let e = self.src_emb.row(src[i]).to_owned();
            match masks {
                Some(m) => masked(e, &m.emb[i]),
                None => e,
            }
        };

        let mut fwd = Vec::with_capacity(n);
        let mut prev = Array1::zeros(h);
        for i in 0..n {
            let st = gru_forward(&self.enc_fwd, embed(i), prev);
            prev = st.h.clone();
            fwd.push(st);
        }
        let mut bwd_rev = Vec::with_capacity(n);
        let mut prev = Array1::zeros(h);
        for i in (0..n).rev() {
            let st = gru_forward(&self.enc_bwd, embed(i), prev);
            prev = st.h.clone();
            bwd_rev.push(st);
        }
        bwd_rev.reverse();
        let bwd = bwd_rev;

        let states: Vec<Array1<f64>> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| concat(&[f.h.view(), b.h.view()]))
            .collect();
        let keys = states.iter().map(|hi| self.att_u.dot(hi)).collect();
        EncodedSource {
            states,
            fwd,
            bwd,
            keys,
        }
    }

    /// `s_0 = tanh(init_w · ←h_1 + init_b)`.
    pub fn initial_state(&self, enc: &EncodedSource) -> Array1<f64> {
        (self.init_w.dot(&enc.bwd[0].h) + &self.init_b).mapv(f64::tanh)
    }

    pub fn attend(&self, enc: &EncodedSource, s_prev: &Array1<f64>) -> Result<AttentionStep, NmtError> {
        if s_prev.len() != self.dims.hidden || enc.states.first().map(|h| h.len()) != Some(2 * self.dims.hidden) {
            return Err(NmtError::DimensionMismatch);
        }
        Ok(self.attend_unchecked(enc, s_prev))
    }

    /// Attention over arbitrary encoder states (each of width `2 * hidden`).
    pub fn attend_states(&self, states: &[Array1<f64>], s_prev: &Array1<f64>) -> Result<AttentionStep, NmtError> {
        let h = self.dims.hidden;
        if states.is_empty() {
            return Err(NmtError::EmptySource);
        }
        if s_prev.len() != h || states.iter().any(|x| x.len() != 2 * h) {
            return Err(NmtError::DimensionMismatch);
        }
        let keys: Vec<Array1<f64>> = states.iter().map(|x| self.att_u.dot(x)).collect();
        Ok(self.attend_keys(states, &keys, s_prev))
    }

    fn attend_unchecked(&self, enc: &EncodedSource, s_prev: &Array1<f64>) -> AttentionStep {
        self.attend_keys(&enc.states, &enc.keys, s_prev)
    }

    fn attend_keys(&self, states: &[Array1<f64>], keys: &[Array1<f64>], s_prev: &Array1<f64>) -> AttentionStep {
        let query = self.att_w.dot(s_prev);
        let hidden: Vec<Array1<f64>> = keys
            .iter()
            .map(|k| (&query + k).mapv(f64::tanh))
            .collect();
        let scores: Vec<f64> = hidden.iter().map(|u| self.att_v.dot(u)).collect();
        let weights = softmax(&scores);
        let mut context = Array1::zeros(2 * self.dims.hidden);
        for (w, hi) in weights.iter().zip(states) {
            context.scaled_add(*w, hi);
        }
        AttentionStep {
            scores,
            weights,
            context,
            hidden,
        }
    }

    pub fn decode_step(
        &self,
        enc: &EncodedSource,
        s_prev: &Array1<f64>,
        y_prev: usize,
    ) -> Result<DecodeStep, NmtError> {
        self.check_tgt_id(y_prev)?;
        let attention = self.attend(enc, s_prev)?;
        let emb = self.tgt_emb.row(y_prev).to_owned();
        let x = concat(&[emb.view(), attention.context.view()]);
        let gru = gru_forward(&self.dec, x, s_prev.clone());
        let readout = concat(&[gru.h.view(), attention.context.view(), emb.view()]);
        let logits = self.out_w.dot(&readout) + &self.out_b;
        Ok(DecodeStep {
            logits,
            state: gru.h,
            attention,
        })
    }

    pub(crate) fn check_pair(&self, src: &[usize], tgt: &[usize]) -> Result<(), NmtError> {
        self.check_src(src)?;
        if tgt.len() < 2 {
            return Err(NmtError::EmptyTarget);
        }
        tgt.iter().try_for_each(|&id| self.check_tgt_id(id))
    }

    /// Mean per-token negative log-likelihood under teacher forcing.
    /// `tgt` carries the start marker first and the end marker last.
    pub fn sequence_loss(&self, src: &[usize], tgt: &[usize]) -> Result<f64, NmtError> {
        self.check_pair(src, tgt)?;
        let enc = self.encode_masked(src, None);
        let mut s = self.initial_state(&enc);
        let mut total = 0.0;
        for t in 1..tgt.len() {
            let step = self.decode_step(&enc, &s, tgt[t - 1])?;
            total -= log_softmax_at(&step.logits, tgt[t]);
            s = step.state;
        }
        Ok(total / (tgt.len() - 1) as f64)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, src: &[usize], tgt: &[usize]) -> Result<(f64, NmtParams), NmtError> {
        self.check_pair(src, tgt)?;
        Ok(self.forward_backward(src, tgt, Dropout::default(), &mut rand::rng()))
    }

    /// Training variant with dropout masks drawn from `rng`.
    pub fn loss_and_grad_with_dropout<R: Rng>(
        &self,
        src: &[usize],
        tgt: &[usize],
        dropout: Dropout,
        rng: &mut R,
    ) -> Result<(f64, NmtParams), NmtError> {
        self.check_pair(src, tgt)?;
        Ok(self.forward_backward(src, tgt, dropout, rng))
    }

    fn forward_backward<R: Rng>(
        &self,
        src: &[usize],
        tgt: &[usize],
        dropout: Dropout,
        rng: &mut R,
    ) -> (f64, NmtParams) {
        let dims = self.dims;
        let (e_dim, h_dim) = (dims.emb, dims.hidden);
        let steps = tgt.len() - 1;
        let norm = 1.0 / steps as f64;

        // ---- forward ----
        let src_masks = SourceMasks {
            emb: (0..src.len())
                .map(|_| dropout_mask(rng, e_dim, dropout.embedding))
                .collect(),
        };
        let enc = self.encode_masked(src, Some(&src_masks));
        let s0 = self.initial_state(&enc);
        let mut s = s0.clone();
        let mut trace: Vec<StepTrace> = Vec::with_capacity(steps);
        let mut loss = 0.0;
        for t in 1..=steps {
            let y_prev = tgt[t - 1];
            let emb_mask = dropout_mask(rng, e_dim, dropout.embedding);
            let emb = masked(self.tgt_emb.row(y_prev).to_owned(), &emb_mask);
            let att = self.attend_unchecked(&enc, &s);
            let x = concat(&[emb.view(), att.context.view()]);
            let gru = gru_forward(&self.dec, x, s.clone());
            let readout_mask = dropout_mask(rng, dims.readout(), dropout.hidden);
            let readout = masked(
                concat(&[gru.h.view(), att.context.view(), emb.view()]),
                &readout_mask,
            );
            let logits = self.out_w.dot(&readout) + &self.out_b;
            let probs = Array1::from(softmax(logits.as_slice().expect("contiguous")));
            loss -= probs[tgt[t]].ln();
            let s_next = gru.h.clone();
            trace.push(StepTrace {
                s_prev: s,
                y_prev,
                emb_mask,
                att,
                gru,
                readout,
                readout_mask,
                probs,
                target: tgt[t],
            });
            s = s_next;
        }
        loss *= norm;

        // ---- backward ----
        let mut g = self.zeros_like();
        let n = enc.len();
        let mut d_states: Vec<Array1<f64>> = vec![Array1::zeros(2 * h_dim); n];
        let mut d_keys: Vec<Array1<f64>> = vec![Array1::zeros(h_dim); n];
        let mut ds_next: Array1<f64> = Array1::zeros(h_dim);

        for st in trace.iter().rev() {
            let mut dlogits = st.probs.clone();
            dlogits[st.target] -= 1.0;
            dlogits *= norm;
            add_outer(&mut g.out_w, &dlogits, st.readout.view());
            g.out_b += &dlogits;
            let mut d_readout = self.out_w.t().dot(&dlogits);
            if let Some(m) = &st.readout_mask {
                d_readout *= m;
            }
            let ds = d_readout.slice(s![..h_dim]).to_owned() + &ds_next;
            let mut dc = d_readout.slice(s![h_dim..3 * h_dim]).to_owned();
            let mut de = d_readout.slice(s![3 * h_dim..]).to_owned();

            let (dx, mut ds_prev) = gru_backward(&self.dec, &st.gru, &ds, &mut g.dec);
            de += &dx.slice(s![..e_dim]);
            dc += &dx.slice(s![e_dim..]);

            // Context and softmax.
            let d_weights: Vec<f64> = enc.states.iter().map(|hi| dc.dot(hi)).collect();
            let mean: f64 = st.att.weights.iter().zip(&d_weights).map(|(a, d)| a * d).sum();
            let mut d_pre_sum: Array1<f64> = Array1::zeros(h_dim);
            for i in 0..n {
                let alpha = st.att.weights[i];
                d_states[i].scaled_add(alpha, &dc);
                let d_score = alpha * (d_weights[i] - mean);
                let u = &st.att.hidden[i];
                g.att_v.scaled_add(d_score, u);
                let d_pre = (&self.att_v * d_score) * &u.mapv(|x| 1.0 - x * x);
                d_keys[i] += &d_pre;
                d_pre_sum += &d_pre;
            }
            add_outer(&mut g.att_w, &d_pre_sum, st.s_prev.view());
            ds_prev += &self.att_w.t().dot(&d_pre_sum);

            if let Some(m) = &st.emb_mask {
                de *= m;
            }
            g.tgt_emb.row_mut(st.y_prev).scaled_add(1.0, &de);
            ds_next = ds_prev;
        }

        for (i, dk) in d_keys.iter().enumerate() {
            add_outer(&mut g.att_u, dk, enc.states[i].view());
            d_states[i] += &self.att_u.t().dot(dk);
        }

        // s_0 = tanh(init_w ←h_1 + init_b)
        let d_pre0 = &ds_next * &s0.mapv(|x| 1.0 - x * x);
        add_outer(&mut g.init_w, &d_pre0, enc.bwd[0].h.view());
        g.init_b += &d_pre0;
        let d_bwd_first = self.init_w.t().dot(&d_pre0);

        let mut d_src_x: Vec<Array1<f64>> = vec![Array1::zeros(e_dim); n];
        let mut carry: Array1<f64> = Array1::zeros(h_dim);
        for i in (0..n).rev() {
            let dh = d_states[i].slice(s![..h_dim]).to_owned() + &carry;
            let (dx, dprev) = gru_backward(&self.enc_fwd, &enc.fwd[i], &dh, &mut g.enc_fwd);
            d_src_x[i] += &dx;
            carry = dprev;
        }
        let mut carry: Array1<f64> = Array1::zeros(h_dim);
        for i in 0..n {
            let mut dh = d_states[i].slice(s![h_dim..]).to_owned() + &carry;
            if i == 0 {
                dh += &d_bwd_first;
            }
            let (dx, dprev) = gru_backward(&self.enc_bwd, &enc.bwd[i], &dh, &mut g.enc_bwd);
            d_src_x[i] += &dx;
            carry = dprev;
        }
        for (i, mut dx) in d_src_x.into_iter().enumerate() {
            if let Some(m) = &src_masks.emb[i] {
                dx *= m;
            }
            g.src_emb.row_mut(src[i]).scaled_add(1.0, &dx);
        }

        (loss, g)
    }

    /// Greedy decoding from the start marker until the end marker or `max_len`.
    /// The end marker is not included in the output.
    pub fn translate(&self, src: &[usize], max_len: usize) -> Result<Vec<usize>, NmtError> {
        let enc = self.encode(src)?;
        let mut s = self.initial_state(&enc);
        let mut y = START;
        let mut out = Vec::new();
        while out.len() < max_len {
            let step = self.decode_step(&enc, &s, y)?;
            // First maximum wins, so ties go to the lowest id.
            let best = step
                .logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc })
                .0;
            if best == EOS {
                break;
            }
            out.push(best);
            y = best;
            s = step.state;
        }
        Ok(out)
    }
}

/// Mean of `sequence_loss` over a set of examples.
pub fn mean_loss(params: &NmtParams, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64, NmtError> {
    let mut total = 0.0;
    for (src, tgt) in pairs {
        total += params.sequence_loss(src, tgt)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}
