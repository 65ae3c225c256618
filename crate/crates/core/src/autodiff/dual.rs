//! Scalar forward-mode dual numbers.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// A value together with its derivative along one direction (here: normalized time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualValue {
    pub primal: f64,
    pub tangent: f64,
}

impl DualValue {
    pub fn new(primal: f64, tangent: f64) -> Self {
        DualValue { primal, tangent }
    }

    pub fn constant(primal: f64) -> Self {
        DualValue { primal, tangent: 0.0 }
    }

    /// The independent variable: tangent 1.
    pub fn variable(primal: f64) -> Self {
        DualValue { primal, tangent: 1.0 }
    }

    pub fn tanh(self) -> Self {
        let p = self.primal.tanh();
        DualValue::new(p, (1.0 - p * p) * self.tangent)
    }

    pub fn exp(self) -> Self {
        let p = self.primal.exp();
        DualValue::new(p, p * self.tangent)
    }

    pub fn square(self) -> Self {
        DualValue::new(self.primal * self.primal, 2.0 * self.primal * self.tangent)
    }

    pub fn min_with_zero(self) -> Self {
        if self.primal < 0.0 {
            self
        } else {
            DualValue::new(0.0, 0.0)
        }
    }

    pub fn checked_div(self, rhs: DualValue) -> Result<Self> {
        if rhs.primal == 0.0 {
            return Err(Error::numerical("dual division by zero", None));
        }
        let q = self.primal / rhs.primal;
        Ok(DualValue::new(q, (self.tangent - q * rhs.tangent) / rhs.primal))
    }
}

impl Add for DualValue {
    type Output = DualValue;
    fn add(self, rhs: DualValue) -> DualValue {
        DualValue::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl Sub for DualValue {
    type Output = DualValue;
    fn sub(self, rhs: DualValue) -> DualValue {
        DualValue::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl Mul for DualValue {
    type Output = DualValue;
    fn mul(self, rhs: DualValue) -> DualValue {
        DualValue::new(self.primal * rhs.primal, self.tangent * rhs.primal + self.primal * rhs.tangent)
    }
}

impl Neg for DualValue {
    type Output = DualValue;
    fn neg(self) -> DualValue {
        DualValue::new(-self.primal, -self.tangent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_examples() {
        assert_eq!(DualValue::new(0.0, 1.0).tanh(), DualValue::new(0.0, 1.0));
        assert_eq!(DualValue::new(2.0, 0.0) * DualValue::new(3.0, 0.0), DualValue::new(6.0, 0.0));
        assert!(DualValue::new(1.0, 1.0).checked_div(DualValue::constant(0.0)).is_err());
    }

    #[test]
    fn tangents_match_difference_quotients() {
        let h = 1e-6;
        let x = 0.37;
        let fns: [fn(DualValue) -> DualValue; 5] = [
            |v| v.tanh(),
            |v| v.exp(),
            |v| v.square(),
            |v| (v - DualValue::constant(1.0)).min_with_zero(),
            |v| DualValue::constant(2.0).checked_div(v + DualValue::constant(0.5)).unwrap() * v,
        ];
        for f in fns {
            let d = f(DualValue::variable(x));
            let fd = (f(DualValue::constant(x + h)).primal - f(DualValue::constant(x)).primal) / h;
            assert!((d.tangent - fd).abs() < 1e-5, "{} vs {}", d.tangent, fd);
        }
    }
}
