use super::{NnError, Param};
use ndarray::ArrayD;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update to `params`, which must be passed in the same order
    /// on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<(), NnError> {
        if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(NnError::NonFiniteGradient(p.name.clone()));
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.value.shape()) {
            self.m = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn param(vals: &[f64]) -> Param {
        Param::new("w", ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals.to_vec()).unwrap(), 0.0)
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = param(&[0.5, -2.0]);
        let mut adam = AdamState::new(0.001);
        for _ in 0..10 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value.as_slice().unwrap(), &[0.5, -2.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = param(&[0.0, 0.0, 0.0]);
        p.grad = ArrayD::from_shape_vec(IxDyn(&[3]), vec![3.0, -0.01, 250.0]).unwrap();
        let mut adam = AdamState::new(0.001);
        adam.step(&mut [&mut p]).unwrap();
        for (w, s) in p.value.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - 0.001 * s).abs() < 1e-8, "{w}");
        }
    }

    #[test]
    fn quadratic_bowl() {
        let mut p = param(&[1.0]);
        let mut adam = AdamState::new(0.05);
        for _ in 0..200 {
            p.grad = &p.value * 2.0;
            adam.step(&mut [&mut p]).unwrap();
        }
        assert!(p.value[0].abs() < 1e-3, "{}", p.value[0]);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut p = param(&[1.0]);
        p.grad[0] = f64::NAN;
        let err = AdamState::new(0.001).step(&mut [&mut p]).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient("w".into()));
        assert_eq!(p.value[0], 1.0);
    }
}
