//! Post-hoc classifier calibration applied at the end of each step.
//!
//! Weight alignment (WA) rescales the new-class head rows so their mean ℓ₂
//! norm matches the old-class rows. The dynamic variant (DIWA) scales only
//! part of the way, with an intervention factor
//! `η = 1 - (1 - η_min) · exp(-(C_t - 1) / τ)` that grows with the number of
//! classes `C_t` introduced in the step:
//! `γ = (1 - η) + η · μ_old / μ_new`. Biases are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClassifierModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    #[default]
    None,
    Wa,
    Diwa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub mode: AlignmentMode,
    pub eta_min: f64,
    pub tau: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { mode: AlignmentMode::None, eta_min: 0.2, tau: 5.0 }
    }
}

impl AlignmentConfig {
    pub fn with_mode(mode: AlignmentMode) -> Self {
        AlignmentConfig { mode, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_min) {
            return Err(Error::InvalidArgument(format!("eta_min must be in [0, 1], got {}", self.eta_min)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Mean ℓ₂ norm of the first `old` head rows and of the `new` rows after them.
pub fn row_norm_means(model: &ClassifierModel, old: usize, new: usize) -> Result<(f64, f64)> {
    if old == 0 || new == 0 {
        return Err(Error::InvalidArgument(format!(
            "row-norm means need old and new classes (got {old} old, {new} new)"
        )));
    }
    if model.num_classes() != old + new {
        return Err(Error::InvalidArgument(format!(
            "head has {} rows, expected {old} + {new}",
            model.num_classes()
        )));
    }
    let norms: Vec<f64> = model.head.weight.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mu_old = norms[..old].iter().sum::<f64>() / old as f64;
    let mu_new = norms[old..].iter().sum::<f64>() / new as f64;
    Ok((mu_old, mu_new))
}

pub fn wa_scale(mu_old: f64, mu_new: f64) -> Result<f64> {
    if mu_new <= 0.0 {
        return Err(Error::DegenerateNewHead);
    }
    Ok(mu_old / mu_new)
}

pub fn diwa_eta(step_classes: usize, eta_min: f64, tau: f64) -> f64 {
    // Same value as `1 - (1 - η_min)·e^(-x)`, rearranged so that x = 0
    // returns η_min exactly.
    let x = (step_classes as f64 - 1.0) / tau;
    eta_min + (1.0 - eta_min) * -(-x).exp_m1()
}

pub fn diwa_scale(mu_old: f64, mu_new: f64, eta: f64) -> Result<f64> {
    if mu_new <= 0.0 {
        return Err(Error::DegenerateNewHead);
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must be in [0, 1], got {eta}")));
    }
    Ok((1.0 - eta) + eta * (mu_old / mu_new))
}

/// Scales the last `new` head rows in place and returns the factor used
/// (`1.0` for mode `none`, which leaves the model untouched).
pub fn apply_alignment(model: &mut ClassifierModel, old: usize, new: usize, config: &AlignmentConfig) -> Result<f64> {
    config.validate()?;
    let gamma = match config.mode {
        AlignmentMode::None => return Ok(1.0),
        AlignmentMode::Wa => {
            let (mu_old, mu_new) = row_norm_means(model, old, new)?;
            wa_scale(mu_old, mu_new)?
        }
        AlignmentMode::Diwa => {
            let (mu_old, mu_new) = row_norm_means(model, old, new)?;
            diwa_scale(mu_old, mu_new, diwa_eta(new, config.eta_min, config.tau))?
        }
    };
    model
        .head
        .weight
        .slice_mut(ndarray::s![old.., ..])
        .mapv_inplace(|w| gamma * w);
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadInit;
    use ndarray::{s, Array1};

    fn model(old_norm: f64, new_norm: f64) -> ClassifierModel {
        let mut m = ClassifierModel::new(4, 0, 0);
        m.expand_head(5, HeadInit::Zero, 0).unwrap();
        for (c, mut row) in m.head.weight.rows_mut().into_iter().enumerate() {
            row[c % 4] = if c < 3 { old_norm } else { new_norm };
        }
        m
    }

    #[test]
    fn row_norm_examples() {
        assert_eq!(row_norm_means(&model(1.0, 1.0), 3, 2).unwrap(), (1.0, 1.0));
        assert_eq!(row_norm_means(&model(2.0, 4.0), 3, 2).unwrap(), (2.0, 4.0));
        assert!(row_norm_means(&model(2.0, 4.0), 0, 5).is_err());
        assert!(row_norm_means(&model(2.0, 4.0), 5, 0).is_err());
        assert!(row_norm_means(&model(2.0, 4.0), 2, 2).is_err());
    }

    #[test]
    fn scale_examples() {
        assert_eq!(wa_scale(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(wa_scale(2.0, 4.0).unwrap(), 0.5);
        assert_eq!(wa_scale(2.0, 0.0), Err(Error::DegenerateNewHead));
        assert_eq!(diwa_scale(1.0, 2.0, 0.0).unwrap(), 1.0);
        assert_eq!(diwa_scale(1.0, 2.0, 1.0).unwrap(), wa_scale(1.0, 2.0).unwrap());
        assert_eq!(diwa_scale(1.0, 2.0, 0.5).unwrap(), 0.75);
        assert_eq!(diwa_scale(1.0, 0.0, 0.5), Err(Error::DegenerateNewHead));
    }

    #[test]
    fn eta_examples() {
        assert_eq!(diwa_eta(1, 0.2, 5.0), 0.2);
        assert_eq!(diwa_eta(1, 0.73, 0.1), 0.73);
        for c in 1..50 {
            assert_eq!(diwa_eta(c, 1.0, 3.0), 1.0);
        }
        assert!((diwa_eta(6, 0.2, 5.0) - 0.705_696).abs() < 1e-6);
    }

    #[test]
    fn alignment_modes() {
        let mut m = model(2.0, 4.0);
        m.head.bias.assign(&Array1::from(vec![0.1, 0.2, 0.3, 0.4, 0.5]));
        let orig = m.clone();

        let mut none = m.clone();
        apply_alignment(&mut none, 3, 2, &AlignmentConfig::default()).unwrap();
        assert_eq!(none, orig);

        let mut wa = m.clone();
        apply_alignment(&mut wa, 3, 2, &AlignmentConfig::with_mode(AlignmentMode::Wa)).unwrap();
        let (mu_old, mu_new) = row_norm_means(&wa, 3, 2).unwrap();
        assert!((mu_old - mu_new).abs() < 1e-12);
        assert_eq!(wa.head.weight.slice(s![..3, ..]), orig.head.weight.slice(s![..3, ..]));
        assert_eq!(wa.head.bias, orig.head.bias);

        // With one new class, η = η_min = 0.2: γ = 0.8 + 0.2 · 0.5 = 0.9, one
        // fifth of the way from 1 to the WA factor 0.5.
        let mut one = ClassifierModel::new(4, 0, 0);
        one.expand_head(4, HeadInit::Zero, 0).unwrap();
        one.head.weight.row_mut(0).fill(1.0);
        one.head.weight.row_mut(1).fill(1.0);
        one.head.weight.row_mut(2).fill(1.0);
        one.head.weight.row_mut(3).fill(2.0);
        let gamma = apply_alignment(&mut one, 3, 1, &AlignmentConfig::with_mode(AlignmentMode::Diwa)).unwrap();
        assert!((gamma - 0.9).abs() < 1e-15);
        assert!((one.head.weight[[3, 0]] - 1.8).abs() < 1e-15);

        let mut zero_new = model(2.0, 0.0);
        assert_eq!(
            apply_alignment(&mut zero_new, 3, 2, &AlignmentConfig::with_mode(AlignmentMode::Wa)),
            Err(Error::DegenerateNewHead)
        );

        let bad = AlignmentConfig { mode: AlignmentMode::Diwa, eta_min: 1.5, tau: 5.0 };
        assert!(apply_alignment(&mut m, 3, 2, &bad).is_err());
    }
}
