//! Points of the flat torus `R^n / Z^n`.

use serde::{Deserialize, Serialize};

/// Reduces a real number to its representative in `[0, 1)`.
pub fn wrap_unit(v: f64) -> f64 {
    let r = v - v.floor();
    // v slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Nearest representative of `d` modulo 1, in `[-0.5, 0.5]`.
pub fn nearest_rep(d: f64) -> f64 {
    d - d.round()
}

/// A point of the n-torus with every coordinate normalized into `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AmbientPoint(Vec<f64>);

impl AmbientPoint {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        let mut coords = coords.into();
        for c in coords.iter_mut() {
            *c = wrap_unit(*c);
        }
        AmbientPoint(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    /// Displacement `other - self` taken through the nearest integer shift.
    pub fn displacement_to(&self, other: &AmbientPoint) -> Vec<f64> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| nearest_rep(b - a))
            .collect()
    }

    /// Euclidean distance minimized over integer shifts.
    pub fn torus_distance(&self, other: &AmbientPoint) -> f64 {
        self.displacement_to(other)
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }

    pub fn translated(&self, v: &[f64]) -> AmbientPoint {
        AmbientPoint::new(
            self.0
                .iter()
                .zip(v)
                .map(|(a, d)| a + d)
                .collect::<Vec<_>>(),
        )
    }
}

/// Regular sample grid of `per_axis^n` torus points, at cell centers.
pub fn sample_grid(n: usize, per_axis: usize) -> Vec<AmbientPoint> {
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let mut c = vec![0.0; n];
            for slot in c.iter_mut() {
                *slot = ((idx % per_axis) as f64 + 0.5) / per_axis as f64;
                idx /= per_axis;
            }
            AmbientPoint::new(c)
        })
        .collect()
}

/// Distance from `p` to the segment `[a, b]`, where all three are lifted
/// coordinates close to each other on the torus.
pub fn point_segment_distance(p: &AmbientPoint, a: &AmbientPoint, b: &AmbientPoint) -> f64 {
    let ab = a.displacement_to(b);
    let ap = a.displacement_to(p);
    let len2: f64 = ab.iter().map(|d| d * d).sum();
    let s = if len2 > 0.0 {
        (ab.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ab.iter()
        .zip(&ap)
        .map(|(u, v)| (v - s * u).powi(2))
        .sum::<f64>()
        .sqrt()
}
