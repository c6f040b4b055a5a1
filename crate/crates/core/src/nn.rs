//! Minimal dense layers with hand-written backward passes and an AdamW optimizer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::linalg::Matrix;
use crate::rng::{self, StreamRng};

/// Anything that exposes its trainable tensors in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// FNV-1a over the bit patterns of every parameter.
    fn fingerprint(&self) -> u64 {
        let mut h = rng::hash_bytes(&[]);
        for t in self.tensors() {
            for x in t {
                h = rng::fnv1a(h, &x.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// `y = x W^T + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Gaussian init with variance `1 / inputs`, zero bias.
    pub fn init(inputs: usize, outputs: usize, r: &mut StreamRng) -> Self {
        let s = 1.0 / libm::sqrt(inputs as f64);
        let w = rng::normal_vec(r, inputs * outputs).into_iter().map(|x| x * s).collect();
        Self {
            weight: Matrix::from_vec(outputs, inputs, w).expect("sized buffer"),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul_t(&self.weight)?;
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Returns `(grad, dx)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> Result<(Linear, Matrix)> {
        let weight = dy.t_matmul(x)?;
        let mut bias = vec![0.0; self.outputs()];
        for row in dy.iter_rows() {
            for (b, g) in bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let dx = dy.matmul(&self.weight)?;
        Ok((Linear { weight, bias }, dx))
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// One hidden GELU layer. With `residual`, the input is added to the output
/// (input and output widths must then agree).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub residual: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Matrix,
    pre: Matrix,
    act: Matrix,
}

impl Mlp {
    pub fn init(inputs: usize, hidden: usize, outputs: usize, r: &mut StreamRng) -> Self {
        Self {
            hidden: Linear::init(inputs, hidden, r),
            output: Linear::init(hidden, outputs, r),
            residual: false,
        }
    }

    /// Residual MLP whose output layer starts at zero, i.e. the identity map.
    pub fn residual_identity(width: usize, hidden: usize, r: &mut StreamRng) -> Self {
        Self {
            hidden: Linear::init(width, hidden, r),
            output: Linear::zeros(hidden, width),
            residual: true,
        }
    }

    pub fn inputs(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.output.outputs()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.inputs() {
            return Err(shape_err("mlp input width", self.inputs(), x.cols()));
        }
        let pre = self.hidden.forward(x)?;
        let mut act = pre.clone();
        act.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
        let mut y = self.output.forward(&act)?;
        if self.residual {
            for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *yi += xi;
            }
        }
        Ok((
            y,
            MlpCache {
                input: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.into_vec())
    }

    /// Gradient (shaped like `self`) and input gradient.
    pub fn backward(&self, cache: &MlpCache, dy: &Matrix) -> Result<(Mlp, Matrix)> {
        let (g_out, mut d_act) = self.output.backward(&cache.act, dy)?;
        for (d, p) in d_act.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            *d *= gelu_grad(*p);
        }
        let (g_hidden, mut dx) = self.hidden.backward(&cache.input, &d_act)?;
        if self.residual {
            for (d, g) in dx.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                *d += g;
            }
        }
        Ok((
            Mlp {
                hidden: g_hidden,
                output: g_out,
                residual: self.residual,
            },
            dx,
        ))
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.hidden.tensors();
        t.extend(self.output.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.hidden.tensors_mut();
        t.extend(self.output.tensors_mut());
        t
    }
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to `floor * base` at the final step.
    Cosine { floor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { floor } => {
                let p = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
                let c = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * p.min(1.0)));
                base * (floor + (1.0 - floor) * c)
            }
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Parameters + ?Sized, G: Parameters + ?Sized>(&mut self, params: &mut P, grads: &G, lr: f64) {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        debug_assert_eq!(grads.len(), params.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (k, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * self.weight_decay * p[i];
                p[i] -= lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(mlp: &Mlp, x: &Matrix) {
        // loss = 0.5 * sum(y^2)
        let loss = |m: &Mlp| -> f64 { m.forward(x).unwrap().as_slice().iter().map(|v| 0.5 * v * v).sum() };
        let (y, cache) = mlp.forward_cached(x).unwrap();
        let (grad, _) = mlp.backward(&cache, &y).unwrap();
        let h = 1e-5;
        let g_tensors = grad.tensors();
        let n_tensors = g_tensors.len();
        for t in 0..n_tensors {
            for i in 0..g_tensors[t].len().min(7) {
                let mut plus = mlp.clone();
                plus.tensors_mut()[t][i] += h;
                let mut minus = mlp.clone();
                minus.tensors_mut()[t][i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = g_tensors[t][i];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "tensor {t} idx {i}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut r = rng::stream(3, &[]);
        let mut mlp = Mlp::init(4, 6, 3, &mut r);
        mlp.output.bias = vec![0.1, -0.2, 0.3];
        let x = Matrix::from_vec(2, 4, rng::normal_vec(&mut r, 8)).unwrap();
        fd_check(&mlp, &x);
        let mut res = Mlp::residual_identity(4, 5, &mut r);
        res.output = Linear::init(5, 4, &mut r);
        fd_check(&res, &x);
    }

    #[test]
    fn residual_identity_is_identity() {
        let mut r = rng::stream(1, &[]);
        let m = Mlp::residual_identity(3, 12, &mut r);
        assert_eq!(m.forward_vec(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut p = Linear::zeros(1, 1);
        let mut opt = AdamW::new(0.0);
        for _ in 0..3000 {
            let mut g = Linear::zeros(1, 1);
            g.bias[0] = 2.0 * (p.bias[0] - 3.0);
            g.weight.set(0, 0, 2.0 * (p.weight.get(0, 0) + 1.0));
            opt.step(&mut p, &g, 1e-2);
        }
        assert!((p.bias[0] - 3.0).abs() < 1e-3);
        assert!((p.weight.get(0, 0) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine { floor: 0.1 };
        assert_eq!(s.rate(1.0, 0, 10), 1.0);
        assert!((s.rate(1.0, 9, 10) - 0.1).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.rate(0.5, 7, 10), 0.5);
    }
}
