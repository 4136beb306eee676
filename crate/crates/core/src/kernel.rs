//! Smoothing kernels `K`, their rescaled forms `K_h(u) = K(u/h)/h`, and
//! closed-form moments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gaussian evaluations beyond this many standard deviations are zero.
pub const GAUSSIAN_TRUNCATION: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    #[default]
    Gaussian,
    Epanechnikov,
}

/// `μ_i = ∫ xⁱ K(x) dx` and `ν_i = ∫ xⁱ K(x)² dx` for `i = 0, 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMoments {
    pub mu0: f64,
    pub mu2: f64,
    pub nu0: f64,
    pub nu2: f64,
}

impl KernelSpec {
    pub fn eval<T: Real>(self, x: T) -> T {
        match self {
            KernelSpec::Gaussian => {
                if x.abs() > T::lit(GAUSSIAN_TRUNCATION) {
                    T::zero()
                } else {
                    (-(x * x) * T::lit(0.5)).exp() * T::lit(1.0 / (2.0 * PI).sqrt())
                }
            }
            KernelSpec::Epanechnikov => {
                if x.abs() > T::one() {
                    T::zero()
                } else {
                    T::lit(0.75) * (T::one() - x * x)
                }
            }
        }
    }

    /// `K_h(u) = K(u/h)/h`.
    pub fn scaled<T: Real>(self, h: T, u: T) -> Result<T> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
        }
        Ok(self.weight(h, u))
    }

    /// Unchecked `K_h(u)`; callers guarantee `h > 0`.
    #[inline]
    pub(crate) fn weight<T: Real>(self, h: T, u: T) -> T {
        self.eval(u / h) / h
    }

    /// Half-width of the region where `K` is nonzero.
    pub fn support_radius(self) -> f64 {
        match self {
            KernelSpec::Gaussian => GAUSSIAN_TRUNCATION,
            KernelSpec::Epanechnikov => 1.0,
        }
    }

    pub fn moments(self) -> KernelMoments {
        match self {
            KernelSpec::Gaussian => KernelMoments {
                mu0: 1.0,
                mu2: 1.0,
                nu0: 1.0 / (2.0 * PI.sqrt()),
                nu2: 1.0 / (4.0 * PI.sqrt()),
            },
            KernelSpec::Epanechnikov => KernelMoments {
                mu0: 1.0,
                mu2: 0.2,
                nu0: 0.6,
                nu2: 3.0 / 35.0,
            },
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelSpec::Gaussian => "gaussian",
            KernelSpec::Epanechnikov => "epanechnikov",
        })
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(KernelSpec::Gaussian),
            "epanechnikov" | "epa" => Ok(KernelSpec::Epanechnikov),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}
