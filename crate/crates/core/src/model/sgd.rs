use ndarray::Zip;

use super::{AuxHead, ClassifierModel, Dense, Gradients};
use crate::error::{Error, Result};

/// Mini-batch SGD with classical momentum and L2 weight decay:
/// `g' = g + wd·θ`, `v = μ·v + g'`, `θ = θ - lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be non-negative, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(Sgd { lr, momentum, weight_decay, velocity: None })
    }

    /// Applies one update. Velocity resets whenever the parameter shapes
    /// change (head expansion, new auxiliary head).
    pub fn step(&mut self, model: &mut ClassifierModel, aux: Option<&mut AuxHead>, grads: &Gradients) -> Result<()> {
        check(&model.head, &grads.head)?;
        match (&model.hidden, &grads.hidden) {
            (Some(p), Some(g)) => check(p, g)?,
            (None, None) => {}
            _ => return Err(Error::InvalidArgument("hidden-layer gradient does not match the model".into())),
        }
        match (&aux, &grads.aux) {
            (Some(p), Some(g)) => check(&p.layer, g)?,
            (None, None) => {}
            _ => return Err(Error::InvalidArgument("auxiliary gradient does not match the auxiliary head".into())),
        }
        let velocity = match self.velocity.take() {
            Some(v) if v.same_shape(grads) => v,
            _ => grads.zeros_like(),
        };
        let mut velocity = velocity;
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        update(&mut model.head, &grads.head, &mut velocity.head, lr, mu, wd);
        if let (Some(p), Some(g), Some(v)) = (model.hidden.as_mut(), &grads.hidden, velocity.hidden.as_mut()) {
            update(p, g, v, lr, mu, wd);
        }
        if let (Some(p), Some(g), Some(v)) = (aux, &grads.aux, velocity.aux.as_mut()) {
            update(&mut p.layer, g, v, lr, mu, wd);
        }
        self.velocity = Some(velocity);
        Ok(())
    }
}

fn check(p: &Dense, g: &Dense) -> Result<()> {
    if p.weight.dim() != g.weight.dim() || p.bias.dim() != g.bias.dim() {
        return Err(Error::DimensionMismatch { expected: p.weight.len(), got: g.weight.len() });
    }
    Ok(())
}

fn update(p: &mut Dense, g: &Dense, v: &mut Dense, lr: f64, mu: f64, wd: f64) {
    let rule = |theta: &mut f64, &grad: &f64, vel: &mut f64| {
        *vel = mu * *vel + (grad + wd * *theta);
        *theta -= lr * *vel;
    };
    Zip::from(&mut p.weight).and(&g.weight).and(&mut v.weight).for_each(rule);
    Zip::from(&mut p.bias).and(&g.bias).and(&mut v.bias).for_each(rule);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadInit;

    fn setup() -> (ClassifierModel, Gradients) {
        let mut m = ClassifierModel::new(3, 4, 1);
        m.expand_head(2, HeadInit::SmallUniform, 1).unwrap();
        let mut g = Gradients {
            hidden: Some(Dense::zeros(4, 3)),
            head: Dense::zeros(2, 4),
            aux: None,
        };
        g.head.weight.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64 - 0.3);
        g.hidden.as_mut().unwrap().bias.fill(0.25);
        (m, g)
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut m, g) = setup();
        let before = m.clone();
        Sgd::new(0.0, 0.9, 0.1).unwrap().step(&mut m, None, &g).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn plain_step_is_exact() {
        let (mut m, g) = setup();
        let before = m.clone();
        Sgd::new(0.05, 0.0, 0.0).unwrap().step(&mut m, None, &g).unwrap();
        let expected = &before.head.weight - &(&g.head.weight * 0.05);
        assert_eq!(m.head.weight, expected);
        let hb = &before.hidden.as_ref().unwrap().bias - &(&g.hidden.as_ref().unwrap().bias * 0.05);
        assert_eq!(m.hidden.unwrap().bias, hb);
    }

    #[test]
    fn momentum_unrolls() {
        let (mut m, g) = setup();
        let before = m.clone();
        let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
        opt.step(&mut m, None, &g).unwrap();
        opt.step(&mut m, None, &g).unwrap();
        for ((a, b), gv) in m.head.weight.iter().zip(&before.head.weight).zip(&g.head.weight) {
            assert!((b - a - 0.1 * gv * 2.9).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters_and_shapes() {
        assert!(Sgd::new(-1.0, 0.0, 0.0).is_err());
        assert!(Sgd::new(0.1, 1.0, 0.0).is_err());
        assert!(Sgd::new(0.1, 0.0, -0.1).is_err());
        let (mut m, mut g) = setup();
        g.head = Dense::zeros(3, 4);
        assert!(Sgd::new(0.1, 0.0, 0.0).unwrap().step(&mut m, None, &g).is_err());
    }
}
