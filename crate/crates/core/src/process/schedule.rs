//! Time coefficient functions of interpolant processes
//! `X_t = α(t) X + β(t) Y + γ(t) Z`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

/// A coefficient value with its first and second time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coeff {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Coeff {
    pub const ZERO: Coeff = Coeff {
        value: 0.0,
        d1: 0.0,
        d2: 0.0,
    };
}

/// Endpoint coefficients (α, β).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// α = 1 − t, β = t.
    Affine,
    /// α = cos(πt/2), β = sin(πt/2).
    Trig,
}

impl Schedule {
    pub fn alpha(self, t: f64) -> Coeff {
        match self {
            Schedule::Affine => Coeff {
                value: 1.0 - t,
                d1: -1.0,
                d2: 0.0,
            },
            Schedule::Trig => {
                let (s, c) = (FRAC_PI_2 * t).sin_cos();
                Coeff {
                    value: c,
                    d1: -FRAC_PI_2 * s,
                    d2: -FRAC_PI_2 * FRAC_PI_2 * c,
                }
            }
        }
    }

    pub fn beta(self, t: f64) -> Coeff {
        match self {
            Schedule::Affine => Coeff {
                value: t,
                d1: 1.0,
                d2: 0.0,
            },
            Schedule::Trig => {
                let (s, c) = (FRAC_PI_2 * t).sin_cos();
                Coeff {
                    value: s,
                    d1: FRAC_PI_2 * c,
                    d2: -FRAC_PI_2 * FRAC_PI_2 * s,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    /// γ = √(t(1−t)). Not differentiable at the endpoints; derivatives are
    /// reported as zero there.
    Sqrt,
    /// γ = t(1−t).
    Quadratic,
}

/// Latent-noise coefficient γ(t) multiplying a standard Gaussian `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub kind: LatentKind,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Latent {
    pub fn sqrt() -> Self {
        Latent {
            kind: LatentKind::Sqrt,
            scale: 1.0,
        }
    }

    pub fn gamma(&self, t: f64) -> Coeff {
        let base = match self.kind {
            LatentKind::Sqrt => {
                let g = (t * (1.0 - t)).max(0.0).sqrt();
                if g <= 0.0 {
                    Coeff::ZERO
                } else {
                    Coeff {
                        value: g,
                        d1: (1.0 - 2.0 * t) / (2.0 * g),
                        d2: -1.0 / (4.0 * g * g * g),
                    }
                }
            }
            LatentKind::Quadratic => Coeff {
                value: t * (1.0 - t),
                d1: 1.0 - 2.0 * t,
                d2: -2.0,
            },
        };
        Coeff {
            value: self.scale * base.value,
            d1: self.scale * base.d1,
            d2: self.scale * base.d2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(f64) -> Coeff, t: f64) {
        let h = 1e-4;
        let c = f(t);
        let d1 = (f(t + h).value - f(t - h).value) / (2.0 * h);
        let d2 = (f(t + h).value - 2.0 * c.value + f(t - h).value) / (h * h);
        assert!((d1 - c.d1).abs() < 1e-6, "d1 {d1} vs {}", c.d1);
        assert!((d2 - c.d2).abs() < 1e-4, "d2 {d2} vs {}", c.d2);
    }

    #[test]
    fn endpoint_conditions() {
        for s in [Schedule::Affine, Schedule::Trig] {
            assert!((s.alpha(0.0).value - 1.0).abs() < 1e-15);
            assert!(s.beta(0.0).value.abs() < 1e-15);
            assert!(s.alpha(1.0).value.abs() < 1e-15);
            assert!((s.beta(1.0).value - 1.0).abs() < 1e-15);
        }
        for kind in [LatentKind::Sqrt, LatentKind::Quadratic] {
            let l = Latent { kind, scale: 1.0 };
            assert_eq!(l.gamma(0.0).value, 0.0);
            assert_eq!(l.gamma(1.0).value, 0.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for t in [0.1, 0.33, 0.5, 0.8] {
            fd_check(|t| Schedule::Trig.alpha(t), t);
            fd_check(|t| Schedule::Trig.beta(t), t);
            fd_check(|t| Schedule::Affine.alpha(t), t);
            fd_check(|t| Latent::sqrt().gamma(t), t);
            fd_check(
                |t| {
                    Latent {
                        kind: LatentKind::Quadratic,
                        scale: 0.5,
                    }
                    .gamma(t)
                },
                t,
            );
        }
    }
}
