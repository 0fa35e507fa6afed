use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, matvec_acc, matvec_t_acc, outer_acc, sigmoid, EmbeddedSequence, Mat};
use crate::params::{join, ParamGroups};
use crate::rng::{self, ChaCha8Rng};

const GRU_GATES: [&str; 3] = ["z", "r", "h"];
const Z: usize = 0;
const R: usize = 1;
const H: usize = 2;

/// Update gate `z`, reset gate `r` and candidate `h̃`, each with an input
/// matrix (H×D), a hidden matrix (H×H) and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w: [Vec<f64>; 3],
    pub u: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruCellParams {
            input_dim,
            hidden,
            w: core::array::from_fn(|_| vec![0.0; hidden * input_dim]),
            u: core::array::from_fn(|_| vec![0.0; hidden * hidden]),
            b: core::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidConfig(format!("GRU needs input and hidden dims ≥ 1 (got {input_dim}, {hidden})")));
        }
        let mut cell = Self::zeros(input_dim, hidden);
        let scale = 1.0 / math::sqrt(hidden as f64);
        for k in 0..3 {
            cell.w[k] = rng::uniform_vec(rng, hidden * input_dim, scale);
            cell.u[k] = rng::uniform_vec(rng, hidden * hidden, scale);
        }
        Ok(cell)
    }

    pub fn output_dim(&self) -> usize {
        self.hidden
    }
}

impl ParamGroups for GruCellParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, g) in GRU_GATES.iter().enumerate() {
            f(&join(prefix, &format!("w_{g}")), &[self.hidden, self.input_dim], &self.w[k]);
            f(&join(prefix, &format!("u_{g}")), &[self.hidden, self.hidden], &self.u[k]);
            f(&join(prefix, &format!("b_{g}")), &[self.hidden], &self.b[k]);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let (h, d) = (self.hidden, self.input_dim);
        for (k, g) in GRU_GATES.iter().enumerate() {
            f(&join(prefix, &format!("w_{g}")), &[h, d], &mut self.w[k]);
            f(&join(prefix, &format!("u_{g}")), &[h, h], &mut self.u[k]);
            f(&join(prefix, &format!("b_{g}")), &[h], &mut self.b[k]);
        }
    }
}

struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    candidate: Vec<f64>,
    h: Vec<f64>,
}

fn gate(cell: &GruCellParams, k: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut a = cell.b[k].clone();
    matvec_acc(&cell.w[k], x, &mut a);
    matvec_acc(&cell.u[k], h, &mut a);
    a
}

fn gru_forward(cell: &GruCellParams, x: &[f64], h: &[f64]) -> GruStep {
    let z: Vec<f64> = gate(cell, Z, x, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(cell, R, x, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let candidate: Vec<f64> = gate(cell, H, x, &rh).into_iter().map(math::tanh).collect();
    let h_new = (0..cell.hidden).map(|j| (1.0 - z[j]) * h[j] + z[j] * candidate[j]).collect();
    GruStep {
        h_prev: h.to_vec(),
        z,
        r,
        rh,
        candidate,
        h: h_new,
    }
}

pub fn gru_step(cell: &GruCellParams, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.len() != cell.input_dim {
        return Err(Error::shape("GRU input", cell.input_dim, x.len()));
    }
    if h.len() != cell.hidden {
        return Err(Error::shape("GRU state", cell.hidden, h.len()));
    }
    Ok(gru_forward(cell, x, h).h)
}

fn check_input(cell: &GruCellParams, seq: &EmbeddedSequence) -> Result<()> {
    if seq.valid_length == 0 {
        return Err(Error::Empty("GRU input (valid_length = 0)"));
    }
    if seq.dim() != cell.input_dim {
        return Err(Error::shape("GRU input dim", cell.input_dim, seq.dim()));
    }
    Ok(())
}

/// Final hidden state after folding the cell over the valid positions from a
/// zero state.
pub fn gru_encode(cell: &GruCellParams, seq: &EmbeddedSequence) -> Result<Vec<f64>> {
    check_input(cell, seq)?;
    let mut h = vec![0.0; cell.hidden];
    for t in 0..seq.valid_length {
        h = gru_forward(cell, seq.values.row(t), &h).h;
    }
    Ok(h)
}

pub fn gru_backward(cell: &GruCellParams, seq: &EmbeddedSequence, d_out: &[f64], grad: &mut GruCellParams) -> Result<Mat> {
    check_input(cell, seq)?;
    if d_out.len() != cell.hidden {
        return Err(Error::shape("GRU output gradient", cell.hidden, d_out.len()));
    }
    let mut steps = Vec::with_capacity(seq.valid_length);
    let mut h = vec![0.0; cell.hidden];
    for t in 0..seq.valid_length {
        let step = gru_forward(cell, seq.values.row(t), &h);
        h.clone_from(&step.h);
        steps.push(step);
    }

    let hd = cell.hidden;
    let mut dx = Mat::zeros(seq.len(), seq.dim());
    let mut dh_next = d_out.to_vec();
    for t in (0..seq.valid_length).rev() {
        let s = &steps[t];
        let x = seq.values.row(t);
        let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
        let mut dh = vec![0.0; hd];
        for j in 0..hd {
            let g = dh_next[j];
            da[Z][j] = g * (s.candidate[j] - s.h_prev[j]) * s.z[j] * (1.0 - s.z[j]);
            da[H][j] = g * s.z[j] * (1.0 - s.candidate[j] * s.candidate[j]);
            dh[j] = g * (1.0 - s.z[j]);
        }
        let mut drh = vec![0.0; hd];
        matvec_t_acc(&cell.u[H], &da[H], &mut drh);
        for j in 0..hd {
            da[R][j] = drh[j] * s.h_prev[j] * s.r[j] * (1.0 - s.r[j]);
            dh[j] += drh[j] * s.r[j];
        }
        let dx_row = dx.row_mut(t);
        for k in 0..3 {
            outer_acc(&mut grad.w[k], &da[k], x);
            outer_acc(&mut grad.u[k], &da[k], if k == H { &s.rh } else { &s.h_prev });
            math::add_acc(&mut grad.b[k], &da[k]);
            matvec_t_acc(&cell.w[k], &da[k], dx_row);
        }
        matvec_t_acc(&cell.u[Z], &da[Z], &mut dh);
        matvec_t_acc(&cell.u[R], &da[R], &mut dh);
        dh_next = dh;
    }
    Ok(dx)
}
