//! Invertible structural mechanisms `x_i = f_i(x_pa, u_i)` with standard
//! Gaussian latent priors, plus a deterministic predictor kind.

mod train;

pub use train::{sigmoid_warm_start, train_flow_mle, TrainingOptions, TrainingReport};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

pub fn logit(y: f64) -> f64 {
    y.ln() - (1.0 - y).ln()
}

fn check_dim(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Conditioner mapping a parent vector to `out_dim` values. `Linear` is the
/// default; `Tanh` adds one hidden layer of width 8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum Conditioner {
    Linear {
        /// Row-major, one row per output.
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Tanh {
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: Vec<f64>,
    },
}

pub const TANH_HIDDEN_WIDTH: usize = 8;

impl Conditioner {
    pub fn zero_linear(out_dim: usize, parent_dim: usize) -> Self {
        Conditioner::Linear {
            weight: vec![vec![0.0; parent_dim]; out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn random_tanh(out_dim: usize, parent_dim: usize, rng: &mut impl rand::Rng) -> Self {
        let mut draw = |n: usize, m: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..m).map(|_| 0.1 * rng.random::<f64>() - 0.05).collect())
                .collect()
        };
        Conditioner::Tanh {
            w1: draw(TANH_HIDDEN_WIDTH, parent_dim),
            b1: vec![0.0; TANH_HIDDEN_WIDTH],
            w2: draw(out_dim, TANH_HIDDEN_WIDTH),
            b2: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Conditioner::Linear { bias, .. } => bias.len(),
            Conditioner::Tanh { b2, .. } => b2.len(),
        }
    }

    pub fn parent_dim(&self) -> usize {
        match self {
            Conditioner::Linear { weight, .. } => weight.first().map_or(0, |r| r.len()),
            Conditioner::Tanh { w1, .. } => w1.first().map_or(0, |r| r.len()),
        }
    }

    pub fn eval(&self, pa: &[f64]) -> Vec<f64> {
        match self {
            Conditioner::Linear { weight, bias } => weight
                .iter()
                .zip(bias)
                .map(|(row, b)| b + row.iter().zip(pa).map(|(w, p)| w * p).sum::<f64>())
                .collect(),
            Conditioner::Tanh { w1, b1, w2, b2 } => {
                let h = Self::hidden(w1, b1, pa);
                w2.iter()
                    .zip(b2)
                    .map(|(row, b)| b + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>())
                    .collect()
            }
        }
    }

    fn hidden(w1: &[Vec<f64>], b1: &[f64], pa: &[f64]) -> Vec<f64> {
        w1.iter()
            .zip(b1)
            .map(|(row, b)| (b + row.iter().zip(pa).map(|(w, p)| w * p).sum::<f64>()).tanh())
            .collect()
    }

    /// d out / d pa, shape out_dim x parent_dim.
    pub fn pa_jacobian(&self, pa: &[f64]) -> DMatrix<f64> {
        match self {
            Conditioner::Linear { weight, bias } => {
                let mut jac = DMatrix::zeros(bias.len(), self.parent_dim());
                for (k, row) in weight.iter().enumerate() {
                    for (j, w) in row.iter().enumerate() {
                        jac[(k, j)] = *w;
                    }
                }
                jac
            }
            Conditioner::Tanh { w1, b1, w2, b2 } => {
                let h = Self::hidden(w1, b1, pa);
                let mut jac = DMatrix::zeros(b2.len(), self.parent_dim());
                for (k, row2) in w2.iter().enumerate() {
                    for j in 0..self.parent_dim() {
                        let mut acc = 0.0;
                        for (m, row1) in w1.iter().enumerate() {
                            acc += row2[m] * (1.0 - h[m] * h[m]) * row1[j];
                        }
                        jac[(k, j)] = acc;
                    }
                }
                jac
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Conditioner::Linear { weight, bias } => {
                bias.len() + weight.iter().map(Vec::len).sum::<usize>()
            }
            Conditioner::Tanh { w1, b1, w2, b2 } => {
                b1.len()
                    + b2.len()
                    + w1.iter().map(Vec::len).sum::<usize>()
                    + w2.iter().map(Vec::len).sum::<usize>()
            }
        }
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        match self {
            Conditioner::Linear { weight, bias } => {
                weight.iter().for_each(|row| out.extend_from_slice(row));
                out.extend_from_slice(bias);
            }
            Conditioner::Tanh { w1, b1, w2, b2 } => {
                w1.iter().for_each(|row| out.extend_from_slice(row));
                out.extend_from_slice(b1);
                w2.iter().for_each(|row| out.extend_from_slice(row));
                out.extend_from_slice(b2);
            }
        }
    }

    pub fn read_params(&mut self, mut src: &[f64]) -> usize {
        let take = |src: &mut &[f64], dst: &mut [f64]| {
            dst.copy_from_slice(&src[..dst.len()]);
            *src = &src[dst.len()..];
        };
        let start = src.len();
        match self {
            Conditioner::Linear { weight, bias } => {
                weight.iter_mut().for_each(|row| take(&mut src, row));
                take(&mut src, bias);
            }
            Conditioner::Tanh { w1, b1, w2, b2 } => {
                w1.iter_mut().for_each(|row| take(&mut src, row));
                take(&mut src, b1);
                w2.iter_mut().for_each(|row| take(&mut src, row));
                take(&mut src, b2);
            }
        }
        start - src.len()
    }

    /// Accumulates d loss / d params into `grad` given d loss / d out.
    pub fn accumulate_grad(&self, pa: &[f64], dout: &[f64], grad: &mut [f64]) {
        match self {
            Conditioner::Linear { weight, bias } => {
                let p = self.parent_dim();
                let mut idx = 0;
                for k in 0..weight.len() {
                    for j in 0..p {
                        grad[idx] += dout[k] * pa[j];
                        idx += 1;
                    }
                }
                for k in 0..bias.len() {
                    grad[idx + k] += dout[k];
                }
            }
            Conditioner::Tanh { w1, b1, w2, b2 } => {
                let p = self.parent_dim();
                let h = Self::hidden(w1, b1, pa);
                let mut dz = vec![0.0; b1.len()];
                for (m, dzm) in dz.iter_mut().enumerate() {
                    let mut dh = 0.0;
                    for (k, row2) in w2.iter().enumerate() {
                        dh += dout[k] * row2[m];
                    }
                    *dzm = dh * (1.0 - h[m] * h[m]);
                }
                let mut idx = 0;
                for dzm in &dz {
                    for j in 0..p {
                        grad[idx] += dzm * pa[j];
                        idx += 1;
                    }
                }
                for dzm in &dz {
                    grad[idx] += dzm;
                    idx += 1;
                }
                for dk in dout.iter().take(b2.len()) {
                    for hm in &h {
                        grad[idx] += dk * hm;
                        idx += 1;
                    }
                }
                for dk in dout.iter().take(b2.len()) {
                    grad[idx] += dk;
                    idx += 1;
                }
            }
        }
    }
}

/// Conditional elementwise affine flow: `x_k = exp(s_k(pa)) * u_k + mu_k(pa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFlow {
    pub loc: Conditioner,
    pub log_scale: Conditioner,
}

impl AffineFlow {
    pub fn new_linear(dim: usize, parent_dim: usize) -> Self {
        Self {
            loc: Conditioner::zero_linear(dim, parent_dim),
            log_scale: Conditioner::zero_linear(dim, parent_dim),
        }
    }

    pub fn new_tanh(dim: usize, parent_dim: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            loc: Conditioner::random_tanh(dim, parent_dim, rng),
            log_scale: Conditioner::random_tanh(dim, parent_dim, rng),
        }
    }

    /// Unconditional flow with fixed location and scale.
    pub fn with_constants(loc: &[f64], scale: &[f64]) -> Self {
        Self {
            loc: Conditioner::Linear { weight: vec![vec![]; loc.len()], bias: loc.to_vec() },
            log_scale: Conditioner::Linear {
                weight: vec![vec![]; scale.len()],
                bias: scale.iter().map(|s| s.ln()).collect(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.loc.out_dim()
    }

    pub fn parent_dim(&self) -> usize {
        self.loc.parent_dim()
    }

    pub fn forward(&self, pa: &[f64], u: &[f64]) -> Vec<f64> {
        let mu = self.loc.eval(pa);
        let s = self.log_scale.eval(pa);
        (0..u.len()).map(|k| s[k].exp() * u[k] + mu[k]).collect()
    }

    pub fn inverse(&self, pa: &[f64], x: &[f64]) -> Vec<f64> {
        let mu = self.loc.eval(pa);
        let s = self.log_scale.eval(pa);
        (0..x.len()).map(|k| (x[k] - mu[k]) * (-s[k]).exp()).collect()
    }

    fn nll_param_grad(&self, pa: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        let mu = self.loc.eval(pa);
        let s = self.log_scale.eval(pa);
        let d = x.len();
        let mut nll = 0.0;
        let mut dmu = vec![0.0; d];
        let mut ds = vec![0.0; d];
        for k in 0..d {
            let inv_sigma = (-s[k]).exp();
            let u = (x[k] - mu[k]) * inv_sigma;
            nll += 0.5 * u * u + 0.5 * LN_2PI + s[k];
            dmu[k] = -u * inv_sigma;
            ds[k] = 1.0 - u * u;
        }
        let n_loc = self.loc.param_count();
        self.loc.accumulate_grad(pa, &dmu, &mut grad[..n_loc]);
        self.log_scale.accumulate_grad(pa, &ds, &mut grad[n_loc..]);
        nll
    }
}

/// Scalar sigmoid flow: `x = A * sigmoid(b*u + c.pa + d) + e` with `A, b > 0`.
/// The observable range is the open interval `(e, e + A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFlow {
    pub log_a: f64,
    pub log_b: f64,
    pub c: Vec<f64>,
    pub d: f64,
    pub e: f64,
}

impl SigmoidFlow {
    /// Positions of `log_a` and `e` in the flat parameter layout; freezing
    /// them pins the output box `(e, e + A)` during training.
    pub const BOX_PARAM_INDICES: [usize; 2] = [0, 3];

    pub fn new(parent_dim: usize) -> Self {
        Self { log_a: 0.0, log_b: 0.0, c: vec![0.0; parent_dim], d: 0.0, e: 0.0 }
    }

    pub fn from_constants(a: f64, b: f64, c: Vec<f64>, d: f64, e: f64) -> Self {
        Self { log_a: a.ln(), log_b: b.ln(), c, d, e }
    }

    fn z(&self, pa: &[f64], u: f64) -> f64 {
        self.log_b.exp() * u + self.c.iter().zip(pa).map(|(c, p)| c * p).sum::<f64>() + self.d
    }

    pub fn forward(&self, pa: &[f64], u: f64) -> f64 {
        self.log_a.exp() * sigmoid(self.z(pa, u)) + self.e
    }

    pub fn inverse(&self, pa: &[f64], x: f64) -> Result<f64> {
        let a = self.log_a.exp();
        let y = (x - self.e) / a;
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::InversionFailure(format!(
                "sigmoid flow input {x} outside open range ({}, {})",
                self.e,
                self.e + a
            )));
        }
        let lin = self.c.iter().zip(pa).map(|(c, p)| c * p).sum::<f64>() + self.d;
        Ok((logit(y) - lin) / self.log_b.exp())
    }

    fn param_count(&self) -> usize {
        4 + self.c.len()
    }

    /// Parameter layout: [log_a, log_b, d, e, c...].
    fn append_params(&self, out: &mut Vec<f64>) {
        out.push(self.log_a);
        out.push(self.log_b);
        out.push(self.d);
        out.push(self.e);
        out.extend_from_slice(&self.c);
    }

    fn read_params(&mut self, src: &[f64]) {
        self.log_a = src[0];
        self.log_b = src[1];
        self.d = src[2];
        self.e = src[3];
        let n = self.c.len();
        self.c.copy_from_slice(&src[4..4 + n]);
    }

    fn nll_param_grad(&self, pa: &[f64], x: f64, grad: &mut [f64]) -> Result<f64> {
        let a = self.log_a.exp();
        let b = self.log_b.exp();
        let y = (x - self.e) / a;
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::InversionFailure(format!(
                "sigmoid flow training sample {x} outside open range ({}, {})",
                self.e,
                self.e + a
            )));
        }
        let lin = self.c.iter().zip(pa).map(|(c, p)| c * p).sum::<f64>() + self.d;
        let z = logit(y);
        let u = (z - lin) / b;
        // nll = u^2/2 + ln(2 pi)/2 + ln a + ln b + ln y + ln(1 - y)
        let nll = 0.5 * u * u + 0.5 * LN_2PI + self.log_a + self.log_b + y.ln() + (1.0 - y).ln();
        let dz_dloga = -1.0 / (1.0 - y);
        let dz_de = -1.0 / (a * y * (1.0 - y));
        grad[0] += u * dz_dloga / b + y / (1.0 - y);
        grad[1] += -u * u + 1.0;
        grad[2] += -u / b;
        grad[3] += u * dz_de / b + (1.0 / (1.0 - y) - 1.0 / y) / a;
        for (j, p) in pa.iter().enumerate() {
            grad[4 + j] += -u * p / b;
        }
        Ok(nll)
    }
}

/// Categorical node: latent of dimension K-1 feeds an inner flow producing
/// K-1 logits; the observable is the softmax over those logits at temperature
/// `tau` together with a fixed reference logit `c` for the last class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalMechanism {
    pub classes: usize,
    pub reference_logit: f64,
    pub temperature: f64,
    pub flow: Box<Mechanism>,
}

impl CategoricalMechanism {
    /// Defaults: reference logit 1, temperature 1.
    pub fn new(classes: usize, flow: Mechanism) -> Result<Self> {
        Self::with_constants(classes, 1.0, 1.0, flow)
    }

    pub fn with_constants(
        classes: usize,
        reference_logit: f64,
        temperature: f64,
        flow: Mechanism,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::UnsupportedStructure(
                "categorical mechanism needs at least 2 classes".to_string(),
            ));
        }
        check_dim("categorical inner flow output", classes - 1, flow.output_dim())?;
        check_dim("categorical inner flow latent", classes - 1, flow.latent_dim())?;
        Ok(Self { classes, reference_logit, temperature, flow: Box::new(flow) })
    }

    fn softmax_probs(&self, logits: &[f64]) -> Vec<f64> {
        let k = self.classes;
        let mut scaled: Vec<f64> = logits.iter().map(|g| g / self.temperature).collect();
        scaled.push(self.reference_logit / self.temperature);
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        debug_assert_eq!(exps.len(), k);
        exps.iter().map(|v| v / sum).collect()
    }

    pub fn forward(&self, pa: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let logits = self.flow.forward(pa, u)?;
        Ok(self.softmax_probs(&logits))
    }

    pub fn inverse(&self, pa: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
        check_dim("categorical inverse input", self.classes, probs.len())?;
        let sum: f64 = probs.iter().sum();
        if !probs.iter().all(|p| p.is_finite() && *p > 0.0 && *p < 1.0) || (sum - 1.0).abs() > 1e-8
        {
            return Err(Error::InversionFailure(format!(
                "categorical inverse needs a point strictly inside the simplex, got {probs:?}"
            )));
        }
        let p_last = probs[self.classes - 1];
        let logits: Vec<f64> = probs[..self.classes - 1]
            .iter()
            .map(|p| self.reference_logit + self.temperature * (p.ln() - p_last.ln()))
            .collect();
        self.flow.inverse(pa, &logits)
    }

    /// d probs / d logits (all K rows, first K-1 logit columns), divided by tau.
    fn softmax_jacobian(&self, probs: &[f64]) -> DMatrix<f64> {
        let k = self.classes;
        let mut jac = DMatrix::zeros(k, k - 1);
        for j in 0..k {
            for m in 0..k - 1 {
                let delta = if j == m { probs[j] } else { 0.0 };
                jac[(j, m)] = (delta - probs[j] * probs[m]) / self.temperature;
            }
        }
        jac
    }
}

/// Deterministic linear predictor: no latent block, `y = W pa + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        Self { weight, bias }
    }

    pub fn forward(&self, pa: &[f64]) -> Vec<f64> {
        self.weight
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(pa).map(|(w, p)| w * p).sum::<f64>())
            .collect()
    }
}

/// A structural mechanism. `kind` tags the serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mechanism {
    Affine(AffineFlow),
    Sigmoid(SigmoidFlow),
    Categorical(CategoricalMechanism),
    Predictor(LinearPredictor),
}

impl Mechanism {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Mechanism::Affine(_) => "affine",
            Mechanism::Sigmoid(_) => "sigmoid",
            Mechanism::Categorical(_) => "categorical",
            Mechanism::Predictor(_) => "predictor",
        }
    }

    /// Dimension of the observable block this mechanism produces.
    pub fn output_dim(&self) -> usize {
        match self {
            Mechanism::Affine(f) => f.dim(),
            Mechanism::Sigmoid(_) => 1,
            Mechanism::Categorical(c) => c.classes,
            Mechanism::Predictor(p) => p.bias.len(),
        }
    }

    /// Dimension of the latent block (K-1 for categorical, 0 for predictors).
    pub fn latent_dim(&self) -> usize {
        match self {
            Mechanism::Affine(f) => f.dim(),
            Mechanism::Sigmoid(_) => 1,
            Mechanism::Categorical(c) => c.classes - 1,
            Mechanism::Predictor(_) => 0,
        }
    }

    pub fn parent_dim(&self) -> usize {
        match self {
            Mechanism::Affine(f) => f.parent_dim(),
            Mechanism::Sigmoid(f) => f.c.len(),
            Mechanism::Categorical(c) => c.flow.parent_dim(),
            Mechanism::Predictor(p) => p.weight.first().map_or(0, Vec::len),
        }
    }

    pub fn forward(&self, pa: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("mechanism forward parents", self.parent_dim(), pa.len())?;
        check_dim("mechanism forward latent", self.latent_dim(), u.len())?;
        Ok(match self {
            Mechanism::Affine(f) => f.forward(pa, u),
            Mechanism::Sigmoid(f) => vec![f.forward(pa, u[0])],
            Mechanism::Categorical(c) => c.forward(pa, u)?,
            Mechanism::Predictor(p) => p.forward(pa),
        })
    }

    /// Latent recovering `forward(pa, u) == x`. Deterministic mechanisms have
    /// an empty latent, so their inverse is the empty vector by construction.
    pub fn inverse(&self, pa: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim("mechanism inverse parents", self.parent_dim(), pa.len())?;
        check_dim("mechanism inverse observable", self.output_dim(), x.len())?;
        Ok(match self {
            Mechanism::Affine(f) => f.inverse(pa, x),
            Mechanism::Sigmoid(f) => vec![f.inverse(pa, x[0])?],
            Mechanism::Categorical(c) => c.inverse(pa, x)?,
            Mechanism::Predictor(_) => vec![],
        })
    }

    /// d f / d u, shape output_dim x latent_dim.
    pub fn du_jacobian(&self, pa: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("mechanism jacobian parents", self.parent_dim(), pa.len())?;
        check_dim("mechanism jacobian latent", self.latent_dim(), u.len())?;
        Ok(match self {
            Mechanism::Affine(f) => {
                let s = f.log_scale.eval(pa);
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    s.len(),
                    s.iter().map(|v| v.exp()),
                ))
            }
            Mechanism::Sigmoid(f) => {
                let z = f.z(pa, u[0]);
                let sig = sigmoid(z);
                DMatrix::from_element(1, 1, f.log_a.exp() * sig * (1.0 - sig) * f.log_b.exp())
            }
            Mechanism::Categorical(c) => {
                let logits = c.flow.forward(pa, u)?;
                let probs = c.softmax_probs(&logits);
                c.softmax_jacobian(&probs) * c.flow.du_jacobian(pa, u)?
            }
            Mechanism::Predictor(p) => DMatrix::zeros(p.bias.len(), 0),
        })
    }

    /// d f / d pa, shape output_dim x parent_dim.
    pub fn pa_jacobian(&self, pa: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("mechanism jacobian parents", self.parent_dim(), pa.len())?;
        check_dim("mechanism jacobian latent", self.latent_dim(), u.len())?;
        Ok(match self {
            Mechanism::Affine(f) => {
                let s = f.log_scale.eval(pa);
                let jloc = f.loc.pa_jacobian(pa);
                let jscale = f.log_scale.pa_jacobian(pa);
                let mut jac = jloc;
                for k in 0..f.dim() {
                    let sigma_u = s[k].exp() * u[k];
                    for j in 0..f.parent_dim() {
                        jac[(k, j)] += sigma_u * jscale[(k, j)];
                    }
                }
                jac
            }
            Mechanism::Sigmoid(f) => {
                let z = f.z(pa, u[0]);
                let sig = sigmoid(z);
                let scale = f.log_a.exp() * sig * (1.0 - sig);
                DMatrix::from_iterator(1, f.c.len(), f.c.iter().map(|c| scale * c))
            }
            Mechanism::Categorical(c) => {
                let logits = c.flow.forward(pa, u)?;
                let probs = c.softmax_probs(&logits);
                c.softmax_jacobian(&probs) * c.flow.pa_jacobian(pa, u)?
            }
            Mechanism::Predictor(p) => {
                let mut jac = DMatrix::zeros(p.bias.len(), self.parent_dim());
                for (k, row) in p.weight.iter().enumerate() {
                    for (j, w) in row.iter().enumerate() {
                        jac[(k, j)] = *w;
                    }
                }
                jac
            }
        })
    }

    /// log |det d f / d u| for mechanisms with square latent-to-observable
    /// Jacobians (affine and sigmoid flows).
    pub fn forward_log_det(&self, pa: &[f64], u: &[f64]) -> Result<f64> {
        match self {
            Mechanism::Affine(f) => Ok(f.log_scale.eval(pa).iter().sum()),
            Mechanism::Sigmoid(f) => {
                let z = f.z(pa, u[0]);
                let sig = sigmoid(z);
                Ok(f.log_a + f.log_b + sig.ln() + (1.0 - sig).ln())
            }
            Mechanism::Categorical(_) | Mechanism::Predictor(_) => Err(Error::UnsupportedStructure(
                format!("{} mechanism has no square latent Jacobian", self.kind_name()),
            )),
        }
    }

    /// Exact conditional negative log density of `x` given parents, under the
    /// standard Gaussian latent prior (change of variables).
    pub fn nll(&self, pa: &[f64], x: &[f64]) -> Result<f64> {
        let u = self.inverse(pa, x)?;
        let quad: f64 = u.iter().map(|v| 0.5 * v * v).sum();
        Ok(quad + 0.5 * LN_2PI * u.len() as f64 + self.forward_log_det(pa, &u)?)
    }

    pub fn param_count(&self) -> usize {
        match self {
            Mechanism::Affine(f) => f.loc.param_count() + f.log_scale.param_count(),
            Mechanism::Sigmoid(f) => f.param_count(),
            Mechanism::Categorical(c) => c.flow.param_count(),
            Mechanism::Predictor(p) => {
                p.bias.len() + p.weight.iter().map(Vec::len).sum::<usize>()
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            Mechanism::Affine(f) => {
                f.loc.append_params(&mut out);
                f.log_scale.append_params(&mut out);
            }
            Mechanism::Sigmoid(f) => f.append_params(&mut out),
            Mechanism::Categorical(c) => out = c.flow.params(),
            Mechanism::Predictor(p) => {
                p.weight.iter().for_each(|row| out.extend_from_slice(row));
                out.extend_from_slice(&p.bias);
            }
        }
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        check_dim("mechanism parameter vector", self.param_count(), src.len())?;
        match self {
            Mechanism::Affine(f) => {
                let used = f.loc.read_params(src);
                f.log_scale.read_params(&src[used..]);
            }
            Mechanism::Sigmoid(f) => f.read_params(src),
            Mechanism::Categorical(c) => c.flow.set_params(src)?,
            Mechanism::Predictor(p) => {
                let mut idx = 0;
                for row in &mut p.weight {
                    let n = row.len();
                    row.copy_from_slice(&src[idx..idx + n]);
                    idx += n;
                }
                let n = p.bias.len();
                p.bias.copy_from_slice(&src[idx..idx + n]);
            }
        }
        Ok(())
    }

    /// Per-sample NLL with its parameter gradient accumulated into `grad`
    /// (layout matches `params`). Only flow kinds are trainable.
    pub fn nll_param_grad(&self, pa: &[f64], x: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim("training parents", self.parent_dim(), pa.len())?;
        check_dim("training observable", self.output_dim(), x.len())?;
        match self {
            Mechanism::Affine(f) => Ok(f.nll_param_grad(pa, x, grad)),
            Mechanism::Sigmoid(f) => f.nll_param_grad(pa, x[0], grad),
            Mechanism::Categorical(_) | Mechanism::Predictor(_) => {
                Err(Error::UnsupportedStructure(format!(
                    "{} mechanism is not trainable by exact likelihood; fit its inner flow",
                    self.kind_name()
                )))
            }
        }
    }
}

/// Convenience free functions mirroring the mechanism kinds.
pub fn affine_forward(flow: &AffineFlow, pa: &[f64], u: &[f64]) -> Vec<f64> {
    flow.forward(pa, u)
}

pub fn sigmoid_flow_forward(flow: &SigmoidFlow, pa: &[f64], u: f64) -> f64 {
    flow.forward(pa, u)
}

pub fn categorical_forward(mech: &CategoricalMechanism, pa: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    mech.forward(pa, u)
}

pub fn categorical_inverse(
    mech: &CategoricalMechanism,
    pa: &[f64],
    probs: &[f64],
) -> Result<Vec<f64>> {
    mech.inverse(pa, probs)
}

pub fn predictor_forward(pred: &LinearPredictor, pa: &[f64]) -> Vec<f64> {
    pred.forward(pa)
}
