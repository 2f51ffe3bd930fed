//! Energy quantities, stored exactly.
//!
//! All energies in this crate are integer counts of milli-picojoules
//! (1/1000 pJ). Model constants are quantized to this grid when loaded, so
//! every simulated energy, block bound, and equation constant is exact:
//! sums are order-independent and equality checks never flake.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

/// An exact, non-negative energy amount in milli-picojoules.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Energy(pub u64);

impl Energy {
    pub const ZERO: Energy = Energy(0);

    /// Quantizes a picojoule value to the nearest 1/1000 pJ.
    pub fn from_pj(pj: f64) -> Energy {
        assert!(pj >= 0.0 && pj.is_finite(), "energy must be non-negative");
        Energy((pj * 1000.0).round() as u64)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn as_pj(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Exact rational value in picojoules (millis / 1000).
    pub fn to_rational(self) -> BigRational {
        BigRational::new(BigInt::from(self.0), BigInt::from(1000u32))
    }

    pub fn saturating_mul_factor(self, factor: f64) -> Energy {
        assert!(factor >= 0.0 && factor.is_finite());
        Energy((self.0 as f64 * factor).ceil() as u64)
    }
}

impl Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

impl Sub for Energy {
    type Output = Energy;
    fn sub(self, rhs: Energy) -> Energy {
        Energy(self.0 - rhs.0)
    }
}

impl Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        Energy(iter.map(|e| e.0).sum())
    }
}

impl fmt::Display for Energy {
    /// Renders as picojoules with three decimal places, e.g. `2.040 pJ`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03} pJ", self.0 / 1000, self.0 % 1000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantizes_to_milli_pj() {
        assert_eq!(Energy::from_pj(2.0).millis(), 2000);
        assert_eq!(Energy::from_pj(0.02).millis(), 20);
        assert_eq!(Energy::from_pj(9.2).millis(), 9200);
        assert_eq!(Energy::from_pj(0.0005).millis(), 1); // rounds to nearest
    }

    #[test]
    fn displays_three_decimals() {
        assert_eq!(Energy(2040).to_string(), "2.040 pJ");
        assert_eq!(Energy(0).to_string(), "0.000 pJ");
        assert_eq!(Energy(12_700).to_string(), "12.700 pJ");
    }

    #[test]
    fn rational_roundtrip() {
        let e = Energy(11_160);
        let r = e.to_rational();
        assert_eq!(r, BigRational::new(BigInt::from(1116), BigInt::from(100)));
    }
}
