use serde::{Deserialize, Serialize};

use crate::error::{NskError, Result};

/// Scaling constants of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledParams {
    pub eps: f64,
    pub alpha: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl ScaledParams {
    pub fn new(eps: f64, alpha: f64, nu: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            eps,
            alpha,
            nu,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NskError::InvalidParams(m));
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps = {} must lie in (0, 1]", self.eps));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha = {} must lie in [0, 1]", self.alpha));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu = {} must be positive", self.nu));
        }
        if !(self.gamma > 1.0 && self.gamma <= 2.0) {
            return bad(format!("gamma = {} must lie in (1, 2]", self.gamma));
        }
        if self.alpha > 0.0 && self.gamma != 2.0 {
            return bad(format!(
                "alpha = {} > 0 requires gamma = 2 (got gamma = {})",
                self.alpha, self.gamma
            ));
        }
        Ok(())
    }

    /// Capillarity coefficient `eps^(2 alpha)`.
    pub fn kappa(&self) -> f64 {
        capillarity(self.eps, self.alpha)
    }

    pub fn regime(&self) -> Regime {
        if self.alpha == 0.0 {
            Regime::Constant
        } else {
            Regime::Vanishing
        }
    }
}

/// `eps^(2 alpha)` with `0^0 = 1`, so `alpha = 0` is constant capillarity at every `eps`.
pub fn capillarity(eps: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        1.0
    } else {
        eps.powf(2.0 * alpha)
    }
}

/// Capillarity regime of the limit equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `0 < alpha <= 1`.
    Vanishing,
    /// `alpha = 0`.
    Constant,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ScaledParams::new(0.1, 1.0, 0.1, 2.0).is_ok());
        assert!(ScaledParams::new(0.1, 0.0, 0.1, 1.5).is_ok());
        assert!(ScaledParams::new(0.0, 0.0, 0.1, 2.0).is_err());
        assert!(ScaledParams::new(1.5, 0.0, 0.1, 2.0).is_err());
        assert!(ScaledParams::new(0.1, 1.2, 0.1, 2.0).is_err());
        assert!(ScaledParams::new(0.1, 0.0, 0.0, 2.0).is_err());
        assert!(ScaledParams::new(0.1, 0.0, 0.1, 1.0).is_err());
        let e = ScaledParams::new(0.1, 0.5, 0.1, 1.5).unwrap_err();
        assert!(e.to_string().contains("gamma = 2"));
    }

    #[test]
    fn kappa_convention() {
        assert_eq!(capillarity(0.0, 0.0), 1.0);
        assert_eq!(capillarity(0.0, 0.3), 0.0);
        assert!((capillarity(0.5, 1.0) - 0.25).abs() < 1e-15);
        let p = ScaledParams::new(0.1, 1.0, 0.1, 2.0).unwrap();
        assert!((p.kappa() - 0.01).abs() < 1e-15);
        assert_eq!(p.regime(), Regime::Vanishing);
    }
}
