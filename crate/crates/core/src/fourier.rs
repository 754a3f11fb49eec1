//! Truncated real Fourier series on tori, the parameter language for
//! user-supplied functions in scenarios.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// One term `sin * sin(2π k·x) + cos * cos(2π k·x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub freq: Vec<i32>,
    #[serde(default)]
    pub sin: f64,
    #[serde(default)]
    pub cos: f64,
}

/// `constant + Σ terms`, periodic with period 1 in every variable.
///
/// A frequency vector shorter than the argument is padded with zeros.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<FourierTerm>,
}

impl FourierSeries {
    pub fn constant(c: f64) -> Self {
        FourierSeries {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with_sin(mut self, freq: &[i32], amp: f64) -> Self {
        self.terms.push(FourierTerm {
            freq: freq.to_vec(),
            sin: amp,
            cos: 0.0,
        });
        self
    }

    pub fn with_cos(mut self, freq: &[i32], amp: f64) -> Self {
        self.terms.push(FourierTerm {
            freq: freq.to_vec(),
            sin: 0.0,
            cos: amp,
        });
        self
    }

    fn phase(freq: &[i32], x: &[f64]) -> f64 {
        TAU * freq
            .iter()
            .zip(x)
            .map(|(k, v)| *k as f64 * v)
            .sum::<f64>()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, term| {
            let (s, c) = Self::phase(&term.freq, x).sin_cos();
            acc + term.sin * s + term.cos * c
        })
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for term in &self.terms {
            let (s, c) = Self::phase(&term.freq, x).sin_cos();
            let dphase = term.sin * c - term.cos * s;
            for (slot, k) in g.iter_mut().zip(&term.freq) {
                *slot += TAU * *k as f64 * dphase;
            }
        }
        g
    }

    /// Upper bound on `|f - constant|`.
    pub fn amplitude_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.sin.abs() + t.cos.abs()).sum()
    }

    pub fn max_freq_len(&self) -> usize {
        self.terms.iter().map(|t| t.freq.len()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.sin == 0.0 && t.cos == 0.0)
    }

    /// Coefficientwise `(1 - s) a + s b` over the union of frequencies.
    pub fn lerp(a: &FourierSeries, b: &FourierSeries, s: f64) -> FourierSeries {
        let mut out = FourierSeries::constant((1.0 - s) * a.constant + s * b.constant);
        for t in &a.terms {
            out.terms.push(FourierTerm {
                freq: t.freq.clone(),
                sin: (1.0 - s) * t.sin,
                cos: (1.0 - s) * t.cos,
            });
        }
        for t in &b.terms {
            out.terms.push(FourierTerm {
                freq: t.freq.clone(),
                sin: s * t.sin,
                cos: s * t.cos,
            });
        }
        out
    }

    pub fn scaled(&self, c: f64) -> FourierSeries {
        FourierSeries {
            constant: c * self.constant,
            terms: self
                .terms
                .iter()
                .map(|t| FourierTerm {
                    freq: t.freq.clone(),
                    sin: c * t.sin,
                    cos: c * t.cos,
                })
                .collect(),
        }
    }
}
