//! Adam with decoupled weight decay.

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Update rule per parameter `p` with gradient `g` at step `t`:
///
/// ```text
/// p <- p * (1 - lr * wd)
/// m <- b1 m + (1 - b1) g ;  v <- b2 v + (1 - b2) g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
///
/// Every parameter is decayed. An optional global-norm clip rescales all
/// gradients before the update.
#[derive(Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    step: u64,
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new<'a>(params: impl IntoIterator<Item = (&'a str, &'a Var)>, cfg: &TrainConfig) -> Result<Self> {
        let params: Vec<(String, Var)> = params.into_iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
        let m = params
            .iter()
            .map(|(_, v)| v.zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            grad_clip: cfg.grad_clip,
            step: 0,
            params,
            m,
            v,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// First and second moment of parameter `i`.
    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.m[i], &self.v[i])
    }

    /// Restores moments and step count saved from an earlier run.
    pub fn restore(&mut self, step: u64, moments: Vec<(Tensor, Tensor)>) -> Result<()> {
        if moments.len() != self.params.len() {
            return Err(Error::Integrity(format!(
                "optimizer state has {} entries, model has {} parameters",
                moments.len(),
                self.params.len()
            )));
        }
        for (i, (m, v)) in moments.into_iter().enumerate() {
            if m.dims() != self.m[i].dims() || v.dims() != self.v[i].dims() {
                return Err(Error::Integrity(format!(
                    "optimizer state shape mismatch for `{}`",
                    self.params[i].0
                )));
            }
            self.m[i] = m.to_dtype(self.m[i].dtype())?;
            self.v[i] = v.to_dtype(self.v[i].dtype())?;
        }
        self.step = step;
        Ok(())
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for (_, p) in &self.params {
            if let Some(g) = grads.get(p.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient. Returns the pre-clip gradient norm.
    pub fn step(&mut self, grads: &GradStore) -> Result<f64> {
        let norm = self.grad_norm(grads)?;
        let scale = match self.grad_clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, (_, p)) in self.params.iter().enumerate() {
            let g = match grads.get(p.as_tensor()) {
                Some(g) if scale != 1.0 => (g * scale)?,
                Some(g) => g.clone(),
                None => p.zeros_like()?,
            };
            let g = g.detach();
            let m = ((&self.m[i] * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            let decayed = (p.as_tensor().detach() * decay)?;
            p.set(&(decayed - (update * self.lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn cfg(lr: f64, wd: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_step_is_pure_decay() {
        let p = Var::new(&[1.5f64, -2.0, 0.25], &Device::Cpu).unwrap();
        let mut opt = AdamW::new([("p", &p)], &cfg(1e-2, 0.1)).unwrap();
        let loss = (p.as_tensor() * 0.0).unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let got: Vec<f64> = p.to_vec1().unwrap();
        let f = 1.0 - 1e-2 * 0.1;
        assert_eq!(got, vec![1.5 * f, -2.0 * f, 0.25 * f]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let p = Var::new(&[1.0f64, -1.0], &Device::Cpu).unwrap();
        let mut opt = AdamW::new([("p", &p)], &cfg(0.1, 0.0)).unwrap();
        let loss = p.as_tensor().sqr().unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let got: Vec<f64> = p.to_vec1().unwrap();
        assert!((got[0] - 0.9).abs() < 1e-6 && (got[1] + 0.9).abs() < 1e-6);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn clipping_bounds_the_first_moment() {
        let p = Var::new(&[3.0f64, 4.0], &Device::Cpu).unwrap();
        let mut c = cfg(0.1, 0.0);
        c.grad_clip = Some(1.0);
        let mut opt = AdamW::new([("p", &p)], &c).unwrap();
        let loss = (p.as_tensor() * 1.0).unwrap().sqr().unwrap().sum_all().unwrap();
        let norm = opt.step(&loss.backward().unwrap()).unwrap();
        assert!((norm - 10.0).abs() < 1e-12);
        let m: Vec<f64> = opt.moments(0).0.to_vec1().unwrap();
        let mnorm = (m[0] * m[0] + m[1] * m[1]).sqrt();
        assert!((mnorm - 0.1).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let p = Var::new(&[5.0f64], &Device::Cpu).unwrap();
        let mut opt = AdamW::new([("p", &p)], &cfg(0.1, 0.0)).unwrap();
        for _ in 0..500 {
            let loss = (p.as_tensor() - 2.0).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let v: Vec<f64> = p.to_vec1().unwrap();
        assert!((v[0] - 2.0).abs() < 1e-2);
    }
}
