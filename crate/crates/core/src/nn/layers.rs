//! Network building blocks over the tape: linear layers, gated recurrent
//! cells, an LSTM stack, and a strided temporal convolution assembled from
//! window concatenation + matmul.

use crate::nn::params::{uniform_fan_in, zeros, ParamId, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::scalar::Scalar;
use rand::Rng;

/// Fully connected layer: y = x W + b, with x as rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(&format!("{prefix}.w"), in_dim, out_dim, uniform_fan_in(in_dim, rng));
        let b = ps.add(&format!("{prefix}.b"), 1, out_dim, uniform_fan_in(in_dim, rng));
        Linear { w, b, in_dim, out_dim }
    }

    /// Same, with weights and bias zero-initialized (residual delta heads).
    pub fn new_zeroed<S: Scalar>(ps: &mut ParamStore<S>, prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = ps.add(&format!("{prefix}.w"), in_dim, out_dim, zeros());
        let b = ps.add(&format!("{prefix}.b"), 1, out_dim, zeros());
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, slot: usize, ps: &ParamStore<S>, x: Var) -> Var {
        let w = tape.param(slot, ps, self.w);
        let b = tape.param(slot, ps, self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Gated recurrent cell with reset-before-candidate gating.
#[derive(Debug, Clone)]
pub struct GruCell {
    w_ih: ParamId,
    b_ih: ParamId,
    w_hh: ParamId,
    b_hh: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = ps.add(&format!("{prefix}.w_ih"), input_dim, 3 * hidden, uniform_fan_in(input_dim, rng));
        let b_ih = ps.add(&format!("{prefix}.b_ih"), 1, 3 * hidden, uniform_fan_in(input_dim, rng));
        let ortho = crate::nn::params::orthogonal_blocks::<S, _>(hidden, 3, rng);
        let w_hh = ps.add(&format!("{prefix}.w_hh"), hidden, 3 * hidden, |r, c| ortho[r * 3 * hidden + c]);
        let b_hh = ps.add(&format!("{prefix}.b_hh"), 1, 3 * hidden, uniform_fan_in(hidden, rng));
        GruCell {
            w_ih,
            b_ih,
            w_hh,
            b_hh,
            input_dim,
            hidden,
        }
    }

    /// One step: returns the next hidden state.
    pub fn step<S: Scalar>(&self, tape: &mut Tape<S>, slot: usize, ps: &ParamStore<S>, x: Var, h: Var) -> Var {
        let hsz = self.hidden;
        let w_ih = tape.param(slot, ps, self.w_ih);
        let b_ih = tape.param(slot, ps, self.b_ih);
        let w_hh = tape.param(slot, ps, self.w_hh);
        let b_hh = tape.param(slot, ps, self.b_hh);
        let gi = tape.matmul(x, w_ih);
        let gi = tape.add_row(gi, b_ih);
        let gh = tape.matmul(h, w_hh);
        let gh = tape.add_row(gh, b_hh);

        let gi_r = tape.slice_cols(gi, 0, hsz);
        let gi_z = tape.slice_cols(gi, hsz, 2 * hsz);
        let gi_n = tape.slice_cols(gi, 2 * hsz, 3 * hsz);
        let gh_r = tape.slice_cols(gh, 0, hsz);
        let gh_z = tape.slice_cols(gh, hsz, 2 * hsz);
        let gh_n = tape.slice_cols(gh, 2 * hsz, 3 * hsz);

        let r_pre = tape.add(gi_r, gh_r);
        let r = tape.sigmoid(r_pre);
        let z_pre = tape.add(gi_z, gh_z);
        let z = tape.sigmoid(z_pre);
        let rn = tape.mul(r, gh_n);
        let n_pre = tape.add(gi_n, rn);
        let n = tape.tanh(n_pre);

        // h' = (1 - z) * n + z * h
        let one_minus_z = tape.affine(z, S::from_f64_lossy(-1.0), S::one());
        let a = tape.mul(one_minus_z, n);
        let b = tape.mul(z, h);
        tape.add(a, b)
    }

    /// Run over a sequence from a zero hidden state; returns the final state.
    pub fn run<S: Scalar>(&self, tape: &mut Tape<S>, slot: usize, ps: &ParamStore<S>, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "empty sequence");
        let batch = tape.value(xs[0]).dim().0;
        let mut h = tape.constant(ndarray::Array2::zeros((batch, self.hidden)));
        for &x in xs {
            h = self.step(tape, slot, ps, x, h);
        }
        h
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w_ih, self.b_ih, self.w_hh, self.b_hh]
    }
}

/// One long-short-term-memory cell.
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_ih: ParamId,
    b_ih: ParamId,
    w_hh: ParamId,
    b_hh: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = ps.add(&format!("{prefix}.w_ih"), input_dim, 4 * hidden, uniform_fan_in(input_dim, rng));
        let b_ih = ps.add(&format!("{prefix}.b_ih"), 1, 4 * hidden, uniform_fan_in(input_dim, rng));
        let ortho = crate::nn::params::orthogonal_blocks::<S, _>(hidden, 4, rng);
        let w_hh = ps.add(&format!("{prefix}.w_hh"), hidden, 4 * hidden, |r, c| ortho[r * 4 * hidden + c]);
        let b_hh = ps.add(&format!("{prefix}.b_hh"), 1, 4 * hidden, uniform_fan_in(hidden, rng));
        LstmCell {
            w_ih,
            b_ih,
            w_hh,
            b_hh,
            input_dim,
            hidden,
        }
    }

    /// One step; returns (h', c').
    pub fn step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        slot: usize,
        ps: &ParamStore<S>,
        x: Var,
        h: Var,
        c: Var,
    ) -> (Var, Var) {
        let hsz = self.hidden;
        let w_ih = tape.param(slot, ps, self.w_ih);
        let b_ih = tape.param(slot, ps, self.b_ih);
        let w_hh = tape.param(slot, ps, self.w_hh);
        let b_hh = tape.param(slot, ps, self.b_hh);
        let gi = tape.matmul(x, w_ih);
        let gi = tape.add_row(gi, b_ih);
        let gh = tape.matmul(h, w_hh);
        let gh = tape.add_row(gh, b_hh);
        let gates = tape.add(gi, gh);

        let i_pre = tape.slice_cols(gates, 0, hsz);
        let f_pre = tape.slice_cols(gates, hsz, 2 * hsz);
        let g_pre = tape.slice_cols(gates, 2 * hsz, 3 * hsz);
        let o_pre = tape.slice_cols(gates, 3 * hsz, 4 * hsz);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);

        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let c_act = tape.tanh(c_next);
        let h_next = tape.mul(o, c_act);
        (h_next, c_next)
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w_ih, self.b_ih, self.w_hh, self.b_hh]
    }
}

/// Stack of LSTM layers run over a full sequence.
#[derive(Debug, Clone)]
pub struct LstmStack {
    pub cells: Vec<LstmCell>,
}

impl LstmStack {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let cells = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden };
                LstmCell::new(ps, &format!("{prefix}.layer{l}"), in_dim, hidden, rng)
            })
            .collect();
        LstmStack { cells }
    }

    /// Run the stack from zero states; returns the top layer's final hidden state.
    pub fn run<S: Scalar>(&self, tape: &mut Tape<S>, slot: usize, ps: &ParamStore<S>, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "empty sequence");
        let batch = tape.value(xs[0]).dim().0;
        let mut inputs: Vec<Var> = xs.to_vec();
        let mut top_h = None;
        for cell in &self.cells {
            let mut h = tape.constant(ndarray::Array2::zeros((batch, cell.hidden)));
            let mut c = tape.constant(ndarray::Array2::zeros((batch, cell.hidden)));
            let mut outputs = Vec::with_capacity(inputs.len());
            for &x in &inputs {
                let (hn, cn) = cell.step(tape, slot, ps, x, h, c);
                h = hn;
                c = cn;
                outputs.push(h);
            }
            top_h = Some(h);
            inputs = outputs;
        }
        top_h.expect("at least one layer")
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.cells.iter().flat_map(|c| c.param_ids()).collect()
    }
}

/// Strided 1-D convolution over a sequence of (B, C) frames, expressed as
/// window concatenation followed by a linear map. Windows that would run
/// past the end clamp to the last frame, so sequences shorter than the
/// kernel still produce one output position.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub lin: Linear,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1d {
    pub fn new<S: Scalar, R: Rng>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let lin = Linear::new(ps, prefix, in_channels * kernel, out_channels, rng);
        Conv1d { lin, kernel, stride }
    }

    pub fn forward_seq<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        slot: usize,
        ps: &ParamStore<S>,
        xs: &[Var],
    ) -> Vec<Var> {
        assert!(!xs.is_empty(), "empty sequence");
        let t = xs.len();
        let positions = if t >= self.kernel {
            (t - self.kernel) / self.stride + 1
        } else {
            1
        };
        let mut out = Vec::with_capacity(positions);
        for p in 0..positions {
            let start = p * self.stride;
            let window: Vec<Var> = (0..self.kernel).map(|k| xs[(start + k).min(t - 1)]).collect();
            let cat = tape.concat_cols(&window);
            out.push(self.lin.forward(tape, slot, ps, cat));
        }
        out
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        self.lin.param_ids()
    }
}
