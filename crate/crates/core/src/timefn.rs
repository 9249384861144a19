//! Scalar coefficients of time.
//!
//! Every time-dependent number in a set description (a radius, a box edge,
//! a constraint offset, a metric scale) is one of five closed forms, so
//! families stay continuous in t by construction and serialize losslessly.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TimeFn {
    Constant(f64),
    /// intercept + slope * t
    Linear { intercept: f64, slope: f64 },
    /// scale / (t_star - t); the pole must lie strictly outside the domain.
    Reciprocal { scale: f64, t_star: f64 },
    /// offset + amplitude * sin(angular * t + phase)
    Sinusoid {
        offset: f64,
        amplitude: f64,
        angular: f64,
        phase: f64,
    },
    /// coeffs[0] + coeffs[1] * t + coeffs[2] * t^2 + ...
    Polynomial(Vec<f64>),
}

impl TimeFn {
    pub fn constant(value: f64) -> Self {
        TimeFn::Constant(value)
    }

    /// True when the value cannot change with t: a constant, or a degenerate
    /// linear/sinusoid/polynomial with zero varying part.
    pub fn is_constant(&self) -> bool {
        match self {
            TimeFn::Constant(_) => true,
            TimeFn::Linear { slope, .. } => *slope == 0.0,
            TimeFn::Reciprocal { .. } => false,
            TimeFn::Sinusoid { amplitude, .. } => *amplitude == 0.0,
            TimeFn::Polynomial(coeffs) => coeffs.iter().skip(1).all(|&c| c == 0.0),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant(c) => *c,
            TimeFn::Linear { intercept, slope } => intercept + slope * t,
            TimeFn::Reciprocal { scale, t_star } => scale / (t_star - t),
            TimeFn::Sinusoid {
                offset,
                amplitude,
                angular,
                phase,
            } => offset + amplitude * (angular * t + phase).sin(),
            TimeFn::Polynomial(coeffs) => {
                // Horner, highest power first.
                coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
        }
    }

    /// Checks the function is defined and finite on the closed interval.
    /// For the reciprocal form this means the pole lies strictly outside.
    pub fn validate_on(&self, interval: [f64; 2]) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let params_ok = match self {
            TimeFn::Constant(c) => finite(*c),
            TimeFn::Linear { intercept, slope } => finite(*intercept) && finite(*slope),
            TimeFn::Reciprocal { scale, t_star } => {
                if !(finite(*scale) && finite(*t_star)) {
                    false
                } else if *t_star >= interval[0] && *t_star <= interval[1] {
                    return Err(Error::invalid(
                        "time coefficient",
                        format!(
                            "reciprocal pole t_star = {} lies inside the domain [{}, {}]",
                            t_star, interval[0], interval[1]
                        ),
                    ));
                } else {
                    true
                }
            }
            TimeFn::Sinusoid {
                offset,
                amplitude,
                angular,
                phase,
            } => finite(*offset) && finite(*amplitude) && finite(*angular) && finite(*phase),
            TimeFn::Polynomial(coeffs) => !coeffs.is_empty() && coeffs.iter().all(|c| finite(*c)),
        };
        if !params_ok {
            return Err(Error::invalid(
                "time coefficient",
                "parameters must be finite (polynomial needs at least one coefficient)",
            ));
        }
        for &t in &[interval[0], interval[1], 0.5 * (interval[0] + interval[1])] {
            if !self.eval(t).is_finite() {
                return Err(Error::invalid(
                    "time coefficient",
                    format!("evaluation is not finite at t = {t}"),
                ));
            }
        }
        Ok(())
    }
}

// --- serde: constants round-trip as bare numbers, everything else tagged ---

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Tagged {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    Reciprocal { scale: f64, t_star: f64 },
    Sinusoid {
        offset: f64,
        amplitude: f64,
        angular: f64,
        #[serde(default)]
        phase: f64,
    },
    Polynomial { coeffs: Vec<f64> },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Number(f64),
    Tagged(Tagged),
}

impl Serialize for TimeFn {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TimeFn::Constant(c) => serializer.serialize_f64(*c),
            TimeFn::Linear { intercept, slope } => Tagged::Linear {
                intercept: *intercept,
                slope: *slope,
            }
            .serialize(serializer),
            TimeFn::Reciprocal { scale, t_star } => Tagged::Reciprocal {
                scale: *scale,
                t_star: *t_star,
            }
            .serialize(serializer),
            TimeFn::Sinusoid {
                offset,
                amplitude,
                angular,
                phase,
            } => Tagged::Sinusoid {
                offset: *offset,
                amplitude: *amplitude,
                angular: *angular,
                phase: *phase,
            }
            .serialize(serializer),
            TimeFn::Polynomial(coeffs) => Tagged::Polynomial {
                coeffs: coeffs.clone(),
            }
            .serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for TimeFn {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = Repr::deserialize(deserializer)?;
        Ok(match repr {
            Repr::Number(c) => {
                if !c.is_finite() {
                    return Err(D::Error::custom("time coefficient must be finite"));
                }
                TimeFn::Constant(c)
            }
            Repr::Tagged(Tagged::Constant { value }) => TimeFn::Constant(value),
            Repr::Tagged(Tagged::Linear { intercept, slope }) => {
                TimeFn::Linear { intercept, slope }
            }
            Repr::Tagged(Tagged::Reciprocal { scale, t_star }) => {
                TimeFn::Reciprocal { scale, t_star }
            }
            Repr::Tagged(Tagged::Sinusoid {
                offset,
                amplitude,
                angular,
                phase,
            }) => TimeFn::Sinusoid {
                offset,
                amplitude,
                angular,
                phase,
            },
            Repr::Tagged(Tagged::Polynomial { coeffs }) => TimeFn::Polynomial(coeffs),
        })
    }
}
