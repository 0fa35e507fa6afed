use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, EmbeddedSequence, Mat};
use crate::params::{join, ParamGroups};
use crate::rng::{self, ChaCha8Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Pooling {
    #[default]
    GlobalMax,
    GlobalAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CnnActivation {
    #[default]
    Relu,
    Identity,
}

/// `C` filters of width `k`; `kernel` is stored `C × k × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub window: usize,
    pub channels: usize,
    pub input_dim: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FilterBank {
    pub fn new(window: usize, channels: usize, input_dim: usize, kernel: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if window == 0 || channels == 0 || input_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "filter bank needs window, channels and input dim ≥ 1 (got {window}, {channels}, {input_dim})"
            )));
        }
        if kernel.len() != channels * window * input_dim {
            return Err(Error::shape("filter kernel", channels * window * input_dim, kernel.len()));
        }
        if bias.len() != channels {
            return Err(Error::shape("filter bias", channels, bias.len()));
        }
        Ok(FilterBank {
            window,
            channels,
            input_dim,
            kernel,
            bias,
        })
    }

    fn weight(&self, c: usize, j: usize) -> &[f64] {
        let start = (c * self.window + j) * self.input_dim;
        &self.kernel[start..start + self.input_dim]
    }

    fn weight_mut(kernel: &mut [f64], window: usize, dim: usize, c: usize, j: usize) -> &mut [f64] {
        let start = (c * window + j) * dim;
        &mut kernel[start..start + dim]
    }

    fn windows(&self, valid_length: usize) -> usize {
        if valid_length >= self.window {
            valid_length - self.window + 1
        } else {
            1
        }
    }

    /// Pre-activations, one row per window.
    fn convolve(&self, seq: &EmbeddedSequence) -> Vec<Vec<f64>> {
        let v = seq.valid_length;
        (0..self.windows(v))
            .map(|s| {
                (0..self.channels)
                    .map(|c| {
                        let mut a = self.bias[c];
                        for j in 0..self.window.min(v - s) {
                            a += math::dot(self.weight(c, j), seq.values.row(s + j));
                        }
                        a
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnEncoderParams {
    pub banks: Vec<FilterBank>,
    pub pooling: Pooling,
    pub activation: CnnActivation,
}

impl CnnEncoderParams {
    pub fn init(
        input_dim: usize,
        windows: &[usize],
        channels: usize,
        pooling: Pooling,
        activation: CnnActivation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Empty("CNN filter windows"));
        }
        let banks = windows
            .iter()
            .map(|&k| {
                let scale = 1.0 / math::sqrt((k * input_dim).max(1) as f64);
                let kernel = rng::uniform_vec(rng, channels * k * input_dim, scale);
                FilterBank::new(k, channels, input_dim, kernel, vec![0.0; channels])
            })
            .collect::<Result<_>>()?;
        Ok(CnnEncoderParams {
            banks,
            pooling,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.banks[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.banks.iter().map(|b| b.channels).sum()
    }

    fn activate(&self, a: f64) -> f64 {
        match self.activation {
            CnnActivation::Relu => a.max(0.0),
            CnnActivation::Identity => a,
        }
    }

    fn activate_grad(&self, a: f64) -> f64 {
        match self.activation {
            CnnActivation::Relu if a <= 0.0 => 0.0,
            _ => 1.0,
        }
    }
}

impl ParamGroups for CnnEncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, b) in self.banks.iter().enumerate() {
            f(&join(prefix, &format!("bank{i}.kernel")), &[b.channels, b.window, b.input_dim], &b.kernel);
            f(&join(prefix, &format!("bank{i}.bias")), &[b.channels], &b.bias);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, b) in self.banks.iter_mut().enumerate() {
            let shape = [b.channels, b.window, b.input_dim];
            f(&join(prefix, &format!("bank{i}.kernel")), &shape, &mut b.kernel);
            f(&join(prefix, &format!("bank{i}.bias")), &[b.channels], &mut b.bias);
        }
    }
}

fn check_input(params: &CnnEncoderParams, seq: &EmbeddedSequence) -> Result<()> {
    if seq.valid_length == 0 {
        return Err(Error::Empty("CNN input (valid_length = 0)"));
    }
    if seq.dim() != params.input_dim() {
        return Err(Error::shape("CNN input dim", params.input_dim(), seq.dim()));
    }
    Ok(())
}

/// Convolves every bank over the valid windows (one window at position 0 when
/// `k` exceeds `valid_length`, with missing rows treated as zero), applies the
/// activation, pools per channel and concatenates the banks.
pub fn cnn_encode(params: &CnnEncoderParams, seq: &EmbeddedSequence) -> Result<Vec<f64>> {
    check_input(params, seq)?;
    let mut out = Vec::with_capacity(params.output_dim());
    for bank in &params.banks {
        let pre = bank.convolve(seq);
        for c in 0..bank.channels {
            let acts = pre.iter().map(|row| params.activate(row[c]));
            out.push(match params.pooling {
                Pooling::GlobalMax => acts.fold(f64::NEG_INFINITY, f64::max),
                Pooling::GlobalAverage => acts.sum::<f64>() / pre.len() as f64,
            });
        }
    }
    Ok(out)
}

/// Accumulates parameter gradients into `grad` and returns the gradient on
/// the input sequence.
pub fn cnn_backward(params: &CnnEncoderParams, seq: &EmbeddedSequence, d_out: &[f64], grad: &mut CnnEncoderParams) -> Result<Mat> {
    check_input(params, seq)?;
    if d_out.len() != params.output_dim() {
        return Err(Error::shape("CNN output gradient", params.output_dim(), d_out.len()));
    }
    let v = seq.valid_length;
    let mut dx = Mat::zeros(seq.len(), seq.dim());
    let mut offset = 0;
    for (bank, gbank) in params.banks.iter().zip(grad.banks.iter_mut()) {
        let pre = bank.convolve(seq);
        let n_w = pre.len();
        for c in 0..bank.channels {
            let g = d_out[offset + c];
            // per-window gradient on the activation
            let d_act: Vec<(usize, f64)> = match params.pooling {
                Pooling::GlobalMax => {
                    let mut best = 0;
                    for s in 1..n_w {
                        if params.activate(pre[s][c]) > params.activate(pre[best][c]) {
                            best = s;
                        }
                    }
                    vec![(best, g)]
                }
                Pooling::GlobalAverage => (0..n_w).map(|s| (s, g / n_w as f64)).collect(),
            };
            for (s, da) in d_act {
                let dpre = da * params.activate_grad(pre[s][c]);
                if dpre == 0.0 {
                    continue;
                }
                gbank.bias[c] += dpre;
                for j in 0..bank.window.min(v - s) {
                    let x = seq.values.row(s + j);
                    let gw = FilterBank::weight_mut(&mut gbank.kernel, bank.window, bank.input_dim, c, j);
                    for (w, &xi) in gw.iter_mut().zip(x) {
                        *w += dpre * xi;
                    }
                    for (d, &w) in dx.row_mut(s + j).iter_mut().zip(bank.weight(c, j)) {
                        *d += dpre * w;
                    }
                }
            }
        }
        offset += bank.channels;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::params::{zeros_like, Gradients};
    use proptest::prelude::*;

    fn identity_bank(d: usize) -> FilterBank {
        let mut kernel = vec![0.0; d * d];
        for c in 0..d {
            kernel[c * d + c] = 1.0;
        }
        FilterBank::new(1, d, d, kernel, vec![0.0; d]).unwrap()
    }

    fn seq(rows: &[&[f64]], valid: usize) -> EmbeddedSequence {
        EmbeddedSequence::new(Mat::from_rows(rows).unwrap(), valid).unwrap()
    }

    #[test]
    fn identity_filter_pooling() {
        let s = seq(&[&[1.0, -2.0], &[3.0, 0.0]], 2);
        let mut p = CnnEncoderParams {
            banks: vec![identity_bank(2)],
            pooling: Pooling::GlobalMax,
            activation: CnnActivation::Relu,
        };
        assert_eq!(cnn_encode(&p, &s).unwrap(), vec![3.0, 0.0]);
        p.pooling = Pooling::GlobalAverage;
        p.activation = CnnActivation::Identity;
        assert_eq!(cnn_encode(&p, &s).unwrap(), vec![2.0, -1.0]);
        // with the ReLU the negative column is clipped before averaging
        p.activation = CnnActivation::Relu;
        assert_eq!(cnn_encode(&p, &s).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn two_wide_window() {
        let bank = FilterBank::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0]).unwrap();
        let p = CnnEncoderParams {
            banks: vec![bank],
            pooling: Pooling::GlobalMax,
            activation: CnnActivation::Relu,
        };
        let s = seq(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]], 3);
        assert_eq!(cnn_encode(&p, &s).unwrap(), vec![9.0]);
        // window wider than the sequence: one window at position 0
        let short = seq(&[&[1.0, 2.0], &[0.0, 0.0]], 1);
        assert_eq!(cnn_encode(&p, &short).unwrap(), vec![1.0]);
    }

    #[test]
    fn empty_input_is_rejected() {
        let p = CnnEncoderParams {
            banks: vec![identity_bank(2)],
            pooling: Pooling::GlobalMax,
            activation: CnnActivation::Relu,
        };
        assert!(matches!(cnn_encode(&p, &seq(&[&[1.0, 2.0]], 0)), Err(Error::Empty(_))));
    }

    fn random_params(pooling: Pooling, seed: u64) -> CnnEncoderParams {
        let mut r = rng::seeded(seed);
        let mut p = CnnEncoderParams::init(3, &[1, 2, 4], 2, pooling, CnnActivation::Relu, &mut r).unwrap();
        for b in &mut p.banks {
            b.bias = rng::uniform_vec(&mut r, b.channels, 0.3);
        }
        p
    }

    #[test]
    fn gradients_match_finite_differences() {
        for pooling in [Pooling::GlobalMax, Pooling::GlobalAverage] {
            let p = random_params(pooling, 11);
            let mut r = rng::seeded(12);
            let s = EmbeddedSequence::new(Mat::from_vec(5, 3, rng::uniform_vec(&mut r, 15, 1.0)).unwrap(), 4).unwrap();
            let probe = rng::uniform_vec(&mut r, p.output_dim(), 1.0);
            let mut g = zeros_like(&p);
            let dx = cnn_backward(&p, &s, &probe, &mut g).unwrap();
            let grads = Gradients::collect(&g, "", &|_| true);
            let report = gradcheck::check(&p, &grads, 1e-5, |q| math::dot(&cnn_encode(q, &s).unwrap(), &probe));
            assert!(report.passes(1e-4), "{pooling:?} {report:?}");

            for i in 0..s.values.as_slice().len() {
                let mut plus = s.clone();
                plus.values.as_mut_slice()[i] += 1e-5;
                let mut minus = s.clone();
                minus.values.as_mut_slice()[i] -= 1e-5;
                let num = (math::dot(&cnn_encode(&p, &plus).unwrap(), &probe)
                    - math::dot(&cnn_encode(&p, &minus).unwrap(), &probe))
                    / 2e-5;
                assert!(gradcheck::relative_error(dx.as_slice()[i], num) < 1e-4);
            }
        }
    }

    proptest! {
        #[test]
        fn padding_invariance(vals in proptest::collection::vec(-2.0f64..2.0, 12), extra in 0usize..4, avg in any::<bool>()) {
            let pooling = if avg { Pooling::GlobalAverage } else { Pooling::GlobalMax };
            let p = random_params(pooling, 5);
            let s = EmbeddedSequence::new(Mat::from_vec(4, 3, vals).unwrap(), 4).unwrap();
            prop_assert_eq!(cnn_encode(&p, &s).unwrap(), cnn_encode(&p, &s.padded(extra)).unwrap());
        }

        #[test]
        fn max_pool_k1_is_order_free(vals in proptest::collection::vec(-2.0f64..2.0, 12), seed in 0u64..1000) {
            let mut r = rng::seeded(seed);
            let p = CnnEncoderParams::init(3, &[1], 4, Pooling::GlobalMax, CnnActivation::Relu, &mut r).unwrap();
            let s = EmbeddedSequence::new(Mat::from_vec(4, 3, vals.clone()).unwrap(), 4).unwrap();
            let mut order = vec![0, 1, 2, 3];
            rng::shuffle(&mut r, &mut order);
            let rows: Vec<&[f64]> = order.iter().map(|&i| &vals[i * 3..i * 3 + 3]).collect();
            let permuted = EmbeddedSequence::new(Mat::from_rows(&rows).unwrap(), 4).unwrap();
            prop_assert_eq!(cnn_encode(&p, &s).unwrap(), cnn_encode(&p, &permuted).unwrap());
        }
    }
}
