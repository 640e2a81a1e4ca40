//! Kernel function `K` and the scaled one-sided weight `K_h(d) = 2 K(d/h) / h`.
//!
//! The factor 2 compensates for one-sided use: every weighted term pairs a
//! measurement time with a later evaluation time, so only the half-window
//! `d in [0, h)` ever carries mass. `K` must be a symmetric density on
//! (-1, 1), nondecreasing on [-1, 0] and nonincreasing on [0, 1].

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Supported kernel families. Only Epanechnikov ships; the enum exists so
/// adding triangular or biweight stays a local change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Epanechnikov,
}

impl Kernel {
    /// `K(u)`: the kernel density itself, zero outside (-1, 1).
    pub fn density(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `K_h(d) = 2 K(d/h) / h`; exactly zero for `|d| >= h`.
    pub fn weight(self, d: f64, h: f64) -> f64 {
        assert!(h > 0.0, "bandwidth must be positive, got {h}");
        if d.abs() >= h {
            0.0
        } else {
            2.0 * self.density(d / h) / h
        }
    }

    /// `int_0^1 K(u)^2 du`, the half-line squared-kernel integral that scales
    /// the asymptotic variance. 3/10 for Epanechnikov.
    pub fn squared_mass_halfline(self) -> f64 {
        match self {
            // int_0^1 (0.75 (1 - u^2))^2 du = 0.5625 * 8/15
            Kernel::Epanechnikov => 0.3,
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Epanechnikov => write!(f, "epanechnikov"),
        }
    }
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            other => Err(format!("unknown kernel family: {other}")),
        }
    }
}
