use crate::error::{Error, Result};
use crate::netgraph::NetworkWeights;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// In `[0, 1)`.
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Classical momentum: `v <- momentum * v - lr * g; w <- w + v`.
pub fn sgd_step<T: Real>(
    w: &mut NetworkWeights<T>,
    grads: &NetworkWeights<T>,
    velocity: &mut NetworkWeights<T>,
    cfg: &SgdConfig,
) -> Result<()> {
    let all = vec![true; w.len()];
    sgd_step_masked(w, grads, velocity, cfg, &all)
}

/// [`sgd_step`] restricted to the filters flagged in `trainable`; the other
/// filters and their velocities are left untouched.
pub fn sgd_step_masked<T: Real>(
    w: &mut NetworkWeights<T>,
    grads: &NetworkWeights<T>,
    velocity: &mut NetworkWeights<T>,
    cfg: &SgdConfig,
    trainable: &[bool],
) -> Result<()> {
    if grads.len() != w.len() || velocity.len() != w.len() || trainable.len() != w.len() {
        return Err(Error::arg("weights, gradients, velocity and mask must align"));
    }
    let lr = T::of(cfg.learning_rate);
    let mu = T::of(cfg.momentum);
    for (i, ((f, g), v)) in w
        .filters
        .iter_mut()
        .zip(&grads.filters)
        .zip(&mut velocity.filters)
        .enumerate()
    {
        if !trainable[i] {
            continue;
        }
        if f.weights().shape() != g.weights().shape() || f.weights().shape() != v.weights().shape() {
            return Err(Error::arg(format!("filter {i}: gradient or velocity shape differs")));
        }
        let (fw, fb) = f.parts_mut();
        let (vw, vb) = v.parts_mut();
        let params = fw.data_mut().iter_mut().chain(fb.iter_mut());
        let vels = vw.data_mut().iter_mut().chain(vb.iter_mut());
        let gs = g.weights().data().iter().chain(g.bias());
        for ((p, v), &g) in params.zip(vels).zip(gs) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{ConvLayerSpec, Layer, NetworkSpec};

    fn net() -> NetworkSpec {
        NetworkSpec::new(vec![
            Layer::Conv(ConvLayerSpec::new(2, 2, 3)),
            Layer::Conv(ConvLayerSpec::new(2, 1, 1)),
        ])
        .unwrap()
    }

    fn cfg(lr: f64, momentum: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum,
            batch_size: 1,
            iterations: 1,
            seed: 0,
        }
    }

    fn constant(net: &NetworkSpec, v: f64) -> NetworkWeights<f64> {
        let mut w = NetworkWeights::zeros(net).unwrap();
        w.params_mut().for_each(|p| *p = v);
        w
    }

    #[test]
    fn vanilla_step() {
        let n = net();
        let mut w = NetworkWeights::<f64>::random_fan_in(&n, 1).unwrap();
        let before = w.clone();
        let g = constant(&n, 0.5);
        let mut v = NetworkWeights::zeros(&n).unwrap();
        sgd_step(&mut w, &g, &mut v, &cfg(0.1, 0.0)).unwrap();
        for (a, b) in w.params().zip(before.params()) {
            assert!((a - (b - 0.05)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_settles() {
        let n = net();
        let mut w = constant(&n, 1.0);
        let g = NetworkWeights::zeros(&n).unwrap();
        let mut v = constant(&n, 0.2);
        let mut last = w.clone();
        for _ in 0..2000 {
            sgd_step(&mut w, &g, &mut v, &cfg(0.1, 0.9)).unwrap();
            last = w.clone();
        }
        // Geometric series: 1 + 0.2 * 0.9 / (1 - 0.9) = 2.8.
        for p in last.params() {
            assert!((p - 2.8).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn two_steps_with_momentum() {
        let (lr, mu, gv) = (0.01, 0.9, 0.3);
        let n = net();
        let mut w = constant(&n, 0.0);
        let g = constant(&n, gv);
        let mut v = NetworkWeights::zeros(&n).unwrap();
        sgd_step(&mut w, &g, &mut v, &cfg(lr, mu)).unwrap();
        sgd_step(&mut w, &g, &mut v, &cfg(lr, mu)).unwrap();
        // v1 = -lr g, v2 = -mu lr g - lr g, total = -lr g (2 + mu).
        let expect = -lr * gv * (2.0 + mu);
        for p in w.params() {
            assert!((p - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_freezes_filters() {
        let n = net();
        let mut w = NetworkWeights::<f32>::random_fan_in(&n, 2).unwrap();
        let before = w.clone();
        let g = NetworkWeights::<f32>::random_fan_in(&n, 3).unwrap();
        let mut v = NetworkWeights::zeros(&n).unwrap();
        sgd_step_masked(&mut w, &g, &mut v, &cfg(0.1, 0.5), &[false, true]).unwrap();
        assert_eq!(w.filters[0], before.filters[0]);
        assert_ne!(w.filters[1], before.filters[1]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 0.5).validate().is_err());
        assert!(cfg(0.1, 1.0).validate().is_err());
        assert!(cfg(0.1, 0.99).validate().is_ok());
    }
}
