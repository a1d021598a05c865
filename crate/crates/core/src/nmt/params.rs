use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NmtError;

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb: usize,
    pub hidden: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<(), NmtError> {
        if self.src_vocab == 0 || self.tgt_vocab < 2 || self.emb == 0 || self.hidden == 0 {
            return Err(NmtError::BadDims(*self));
        }
        Ok(())
    }

    /// Width of the readout vector `[s; c; e]`.
    pub fn readout(&self) -> usize {
        self.hidden + 2 * self.hidden + self.emb
    }

    pub fn num_params(&self) -> usize {
        let gru = |input: usize| 3 * (self.hidden * input + self.hidden * self.hidden + self.hidden);
        let (e, h) = (self.emb, self.hidden);
        self.src_vocab * e
            + self.tgt_vocab * e
            + 2 * gru(e)
            + gru(e + 2 * h)
            + h * h
            + h
            + h * h
            + h * 2 * h
            + h
            + self.tgt_vocab * self.readout()
            + self.tgt_vocab
    }
}

/// One GRU cell: update gate `z`, reset gate `r`, candidate `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_z: Array2::zeros((hidden, input)),
            u_z: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            w_r: Array2::zeros((hidden, input)),
            u_r: Array2::zeros((hidden, hidden)),
            b_r: Array1::zeros(hidden),
            w_h: Array2::zeros((hidden, input)),
            u_h: Array2::zeros((hidden, hidden)),
            b_h: Array1::zeros(hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.len()
    }

    fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        out.push(Tensor::matrix(format!("{prefix}.w_z"), &self.w_z));
        out.push(Tensor::matrix(format!("{prefix}.u_z"), &self.u_z));
        out.push(Tensor::vector(format!("{prefix}.b_z"), &self.b_z));
        out.push(Tensor::matrix(format!("{prefix}.w_r"), &self.w_r));
        out.push(Tensor::matrix(format!("{prefix}.u_r"), &self.u_r));
        out.push(Tensor::vector(format!("{prefix}.b_r"), &self.b_r));
        out.push(Tensor::matrix(format!("{prefix}.w_h"), &self.w_h));
        out.push(Tensor::matrix(format!("{prefix}.u_h"), &self.u_h));
        out.push(Tensor::vector(format!("{prefix}.b_h"), &self.b_h));
    }

    fn push_slices_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for m in [&mut self.w_z, &mut self.u_z] {
            out.push(m.as_slice_mut().expect("standard layout"));
        }
        out.push(self.b_z.as_slice_mut().expect("standard layout"));
        for m in [&mut self.w_r, &mut self.u_r] {
            out.push(m.as_slice_mut().expect("standard layout"));
        }
        out.push(self.b_r.as_slice_mut().expect("standard layout"));
        for m in [&mut self.w_h, &mut self.u_h] {
            out.push(m.as_slice_mut().expect("standard layout"));
        }
        out.push(self.b_h.as_slice_mut().expect("standard layout"));
    }
}

/// Read-only view of one named parameter tensor.
#[derive(Debug)]
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl<'a> Tensor<'a> {
    fn matrix(name: String, m: &'a Array2<f64>) -> Self {
        Tensor {
            name,
            shape: m.shape().to_vec(),
            data: m.as_slice().expect("standard layout"),
        }
    }

    fn vector(name: String, v: &'a Array1<f64>) -> Self {
        Tensor {
            name,
            shape: vec![v.len()],
            data: v.as_slice().expect("standard layout"),
        }
    }
}

/// All weights of the encoder-decoder. The same type doubles as a gradient
/// accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct NmtParams {
    pub dims: Dims,
    /// Source embedding, one row per source id.
    pub src_emb: Array2<f64>,
    /// Target embedding, one row per target id.
    pub tgt_emb: Array2<f64>,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    /// Decoder cell; its input is `[E_y(y_prev); c_t]`.
    pub dec: GruParams,
    /// `s_0 = tanh(init_w · h_backward_1 + init_b)`.
    pub init_w: Array2<f64>,
    pub init_b: Array1<f64>,
    /// Attention: `a_i = att_v · tanh(att_w · s_prev + att_u · h_i)`.
    pub att_w: Array2<f64>,
    pub att_u: Array2<f64>,
    pub att_v: Array1<f64>,
    /// Readout over `[s_t; c_t; E_y(y_prev)]`.
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl NmtParams {
    pub fn zeros(dims: Dims) -> Result<Self, NmtError> {
        dims.validate()?;
        let (e, h) = (dims.emb, dims.hidden);
        Ok(NmtParams {
            dims,
            src_emb: Array2::zeros((dims.src_vocab, e)),
            tgt_emb: Array2::zeros((dims.tgt_vocab, e)),
            enc_fwd: GruParams::zeros(e, h),
            enc_bwd: GruParams::zeros(e, h),
            dec: GruParams::zeros(e + 2 * h, h),
            init_w: Array2::zeros((h, h)),
            init_b: Array1::zeros(h),
            att_w: Array2::zeros((h, h)),
            att_u: Array2::zeros((h, 2 * h)),
            att_v: Array1::zeros(h),
            out_w: Array2::zeros((dims.tgt_vocab, dims.readout())),
            out_b: Array1::zeros(dims.tgt_vocab),
        })
    }

    /// Every entry drawn from U(-`range`, `range`) with a seeded generator.
    pub fn random(dims: Dims, seed: u64, range: f64) -> Result<Self, NmtError> {
        let mut p = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slice in p.slices_mut() {
            for x in slice.iter_mut() {
                *x = rng.random_range(-range..range);
            }
        }
        Ok(p)
    }

    pub fn init(dims: Dims, seed: u64) -> Result<Self, NmtError> {
        Self::random(dims, seed, INIT_RANGE)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims).expect("dims already validated")
    }

    /// Named tensors in a fixed order (the checkpoint and optimizer order).
    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut out = vec![
            Tensor::matrix("src_emb".into(), &self.src_emb),
            Tensor::matrix("tgt_emb".into(), &self.tgt_emb),
        ];
        self.enc_fwd.push_tensors("enc_fwd", &mut out);
        self.enc_bwd.push_tensors("enc_bwd", &mut out);
        self.dec.push_tensors("dec", &mut out);
        out.push(Tensor::matrix("init_w".into(), &self.init_w));
        out.push(Tensor::vector("init_b".into(), &self.init_b));
        out.push(Tensor::matrix("att_w".into(), &self.att_w));
        out.push(Tensor::matrix("att_u".into(), &self.att_u));
        out.push(Tensor::vector("att_v".into(), &self.att_v));
        out.push(Tensor::matrix("out_w".into(), &self.out_w));
        out.push(Tensor::vector("out_b".into(), &self.out_b));
        out
    }

    /// Mutable slices in the same order as [`NmtParams::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(36);
        out.push(self.src_emb.as_slice_mut().expect("standard layout"));
        out.push(self.tgt_emb.as_slice_mut().expect("standard layout"));
        self.enc_fwd.push_slices_mut(&mut out);
        self.enc_bwd.push_slices_mut(&mut out);
        self.dec.push_slices_mut(&mut out);
        out.push(self.init_w.as_slice_mut().expect("standard layout"));
        out.push(self.init_b.as_slice_mut().expect("standard layout"));
        out.push(self.att_w.as_slice_mut().expect("standard layout"));
        out.push(self.att_u.as_slice_mut().expect("standard layout"));
        out.push(self.att_v.as_slice_mut().expect("standard layout"));
        out.push(self.out_w.as_slice_mut().expect("standard layout"));
        out.push(self.out_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &NmtParams, scale: f64) {
        let others = other.tensors();
        for (dst, src) in self.slices_mut().into_iter().zip(others) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rebuilds parameters from named flat tensors, checking every name and shape.
    pub fn from_tensors(dims: Dims, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self, NmtError> {
        let mut p = Self::zeros(dims)?;
        let expected: Vec<(String, Vec<usize>)> =
            p.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if expected.len() != tensors.len() {
            return Err(NmtError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, got_shape, data)) in expected.iter().zip(tensors) {
            let size: usize = shape.iter().product();
            if name != got_name || shape != got_shape || data.len() != size {
                return Err(NmtError::Checkpoint(format!(
                    "tensor {got_name:?} {got_shape:?} does not match expected {name:?} {shape:?}"
                )));
            }
        }
        for (dst, (_, _, data)) in p.slices_mut().into_iter().zip(tensors) {
            dst.copy_from_slice(data);
        }
        Ok(p)
    }
}
