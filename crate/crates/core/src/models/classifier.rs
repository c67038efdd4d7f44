use alloc::vec;
use alloc::vec::Vec;

use super::{BayesModel, EnergyModel};
use crate::dataset::{Dataset, Datum};
use crate::linalg::DenseMatrix;
use crate::math;
use crate::rng::RngStream;

/// Layer sizes. `hidden == 0` is multinomial logistic regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierArch {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ClassifierArch {
    pub const MAX_HIDDEN: usize = 16;

    pub fn logistic(input: usize, classes: usize) -> Self {
        Self { input, hidden: 0, classes }
    }

    pub fn one_hidden(input: usize, hidden: usize, classes: usize) -> Self {
        Self { input, hidden, classes }
    }

    pub fn num_params(&self) -> usize {
        if self.hidden == 0 {
            self.classes * (self.input + 1)
        } else {
            self.hidden * (self.input + 1) + self.classes * (self.hidden + 1)
        }
    }
}

/// Softmax classifier with an isotropic Gaussian prior on all weights.
///
/// Parameter layout: `W₁ (hidden × input), b₁, W₂ (classes × hidden), b₂`, or
/// `W (classes × input), b` without a hidden layer. `h = −log softmax(logits)[y]`,
/// `f = ‖θ‖² / (2σ²) + (p/2) log(2πσ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesianClassifier {
    pub arch: ClassifierArch,
    pub prior_std: f64,
}

struct Forward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl BayesianClassifier {
    pub fn new(arch: ClassifierArch, prior_std: f64) -> Self {
        assert!(arch.input > 0 && arch.classes >= 2 && prior_std > 0.0);
        assert!(arch.hidden <= ClassifierArch::MAX_HIDDEN, "hidden layer is capped at 16 units");
        Self { arch, prior_std }
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Forward {
        let ClassifierArch { input, hidden, classes } = self.arch;
        if hidden == 0 {
            let (w, b) = theta.split_at(classes * input);
            let logits = (0..classes)
                .map(|c| b[c] + w[c * input..(c + 1) * input].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            return Forward { hidden: Vec::new(), logits };
        }
        let (w1, rest) = theta.split_at(hidden * input);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(classes * hidden);
        let a: Vec<f64> = (0..hidden)
            .map(|u| math::tanh(b1[u] + w1[u * input..(u + 1) * input].iter().zip(x).map(|(p, q)| p * q).sum::<f64>()))
            .collect();
        let logits = (0..classes)
            .map(|c| b2[c] + w2[c * hidden..(c + 1) * hidden].iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        Forward { hidden: a, logits }
    }

    /// `out += scale * (∂logits/∂θ)ᵀ dl`.
    fn backprop(&self, theta: &[f64], x: &[f64], fw: &Forward, dl: &[f64], scale: f64, out: &mut [f64]) {
        let ClassifierArch { input, hidden, classes } = self.arch;
        if hidden == 0 {
            for c in 0..classes {
                for i in 0..input {
                    out[c * input + i] += scale * dl[c] * x[i];
                }
                out[classes * input + c] += scale * dl[c];
            }
            return;
        }
        let o_b1 = hidden * input;
        let o_w2 = o_b1 + hidden;
        let o_b2 = o_w2 + classes * hidden;
        for c in 0..classes {
            for u in 0..hidden {
                out[o_w2 + c * hidden + u] += scale * dl[c] * fw.hidden[u];
            }
            out[o_b2 + c] += scale * dl[c];
        }
        for u in 0..hidden {
            let back: f64 = (0..classes).map(|c| theta[o_w2 + c * hidden + u] * dl[c]).sum();
            let dpre = back * (1.0 - fw.hidden[u] * fw.hidden[u]);
            for i in 0..input {
                out[u * input + i] += scale * dpre * x[i];
            }
            out[o_b1 + u] += scale * dpre;
        }
    }

    /// Class probabilities at θ.
    pub fn predict_proba(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let fw = self.forward(theta, x);
        let mut p = vec![0.0; self.arch.classes];
        math::softmax_into(&fw.logits, &mut p);
        p
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        let fw = self.forward(theta, x);
        let mut best = 0;
        for (c, l) in fw.logits.iter().enumerate() {
            if *l > fw.logits[best] {
                best = c;
            }
        }
        best
    }
}

impl EnergyModel for BayesianClassifier {
    fn dim_param(&self) -> usize {
        self.arch.num_params()
    }

    fn dim_datum(&self) -> usize {
        self.arch.input
    }

    fn h(&self, theta: &[f64], z: Datum<'_>) -> f64 {
        let y = z.label.expect("classifier datums carry labels");
        let fw = self.forward(theta, z.x);
        math::log_sum_exp(&fw.logits) - fw.logits[y]
    }

    fn f(&self, theta: &[f64]) -> f64 {
        let s2 = self.prior_std * self.prior_std;
        theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * s2)
            + 0.5 * theta.len() as f64 * (math::LN_2PI + math::ln(s2))
    }

    fn add_grad_h(&self, theta: &[f64], z: Datum<'_>, scale: f64, out: &mut [f64]) {
        let y = z.label.expect("classifier datums carry labels");
        let fw = self.forward(theta, z.x);
        let mut dl = vec![0.0; self.arch.classes];
        math::softmax_into(&fw.logits, &mut dl);
        dl[y] -= 1.0;
        self.backprop(theta, z.x, &fw, &dl, scale, out);
    }

    fn add_grad_f(&self, theta: &[f64], scale: f64, out: &mut [f64]) {
        let inv = 1.0 / (self.prior_std * self.prior_std);
        for (o, t) in out.iter_mut().zip(theta) {
            *o += scale * inv * t;
        }
    }

    fn add_hvp_f(&self, _theta: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let inv = 1.0 / (self.prior_std * self.prior_std);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += scale * inv * vi;
        }
    }
}

impl BayesModel for BayesianClassifier {
    fn id(&self) -> &'static str {
        "classifier"
    }

    fn prior_std(&self) -> f64 {
        self.prior_std
    }

    /// Small random weights, so hidden units are not symmetric.
    fn initial_params(&self, _data: &Dataset, rng: &mut RngStream) -> Vec<f64> {
        (0..self.dim_param()).map(|_| 0.1 * rng.normal()).collect()
    }

    /// Expected Fisher information over `y ~ p(y | x, θ)`: `Jᵀ (diag p − p pᵀ) J` with
    /// `J` the logit Jacobian. Positive semidefinite, unlike the observed information.
    fn add_fisher(&self, theta: &[f64], z: Datum<'_>, scale: f64, out: &mut DenseMatrix) {
        let (classes, p) = (self.arch.classes, self.dim_param());
        let fw = self.forward(theta, z.x);
        let mut prob = vec![0.0; classes];
        math::softmax_into(&fw.logits, &mut prob);
        let mut jac = vec![0.0; classes * p];
        let mut e = vec![0.0; classes];
        for c in 0..classes {
            e[c] = 1.0;
            self.backprop(theta, z.x, &fw, &e, 1.0, &mut jac[c * p..(c + 1) * p]);
            e[c] = 0.0;
        }
        let mut g = vec![0.0; p];
        for c in 0..classes {
            for (i, gi) in g.iter_mut().enumerate() {
                let centred: f64 = (0..classes).map(|k| prob[k] * jac[k * p + i]).sum();
                *gi = prob[c] * (jac[c * p + i] - centred);
            }
            for a in 0..p {
                let ja = scale * jac[c * p + a];
                if ja != 0.0 {
                    for (b, gb) in g.iter().enumerate() {
                        out.add_at(a, b, ja * gb);
                    }
                }
            }
        }
    }

    /// 0-1 error.
    fn bounded_loss(&self, theta: &[f64], z: Datum<'_>) -> f64 {
        match z.label {
            Some(y) if self.predict(theta, z.x) == y => 0.0,
            _ => 1.0,
        }
    }
}
