//! Transverse invariant measures given by densities on local transversals.
//!
//! Every chart carries the density `h_i(t) = scale · f(t)` in its transverse
//! coordinates, where `f` is a periodic function of `t`. Invariance under the
//! holonomy of the atlas is a property to be checked, not assumed.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::FourierSeries;
use crate::geometry::{FoliatedAtlas, TransitionSpec};
use crate::maps::FoliationMapSpec;
use crate::smooth::smoothstep;
use crate::torus::{sample_grid, AmbientPoint};

/// Default tolerance of the holonomy-invariance check.
pub const TOL_INV: f64 = 1e-7;

/// Segments whose transverse extent falls below this fraction of their
/// length are tangent to the leaves.
const TANGENCY_RATIO: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityFamily {
    Constant { value: f64 },
    Fourier { series: FourierSeries },
    /// Unit density.
    Lebesgue,
}

impl DensityFamily {
    pub fn eval(&self, t: &[f64]) -> f64 {
        match self {
            DensityFamily::Constant { value } => *value,
            DensityFamily::Fourier { series } => series.eval(t),
            DensityFamily::Lebesgue => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportTag {
    Full,
    Described(String),
}

/// How a segment's contribution is split between the charts containing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartAssignment {
    /// Smoothstep weights on box-boundary distance, normalized.
    PartitionOfUnity,
    /// Only the chart farthest from its boundary.
    FirstContaining,
    /// Only the chart nearest to its boundary.
    LastContaining,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceViolation {
    pub from: usize,
    pub to: usize,
    pub t: Vec<f64>,
    pub violation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub max_violation: f64,
    pub worst: Option<InvarianceViolation>,
    pub samples: usize,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct TransverseDensity {
    pub atlas: Arc<FoliatedAtlas>,
    pub family: DensityFamily,
    pub scale: f64,
    pub support: SupportTag,
}

impl TransverseDensity {
    pub fn new(atlas: &Arc<FoliatedAtlas>, family: DensityFamily) -> Result<Self> {
        if let DensityFamily::Fourier { series } = &family {
            if series.max_freq_len() > atlas.q {
                return Err(Error::Dimension(format!(
                    "density frequencies have more than q = {} entries",
                    atlas.q
                )));
            }
        }
        let d = TransverseDensity {
            atlas: atlas.clone(),
            family,
            scale: 1.0,
            support: SupportTag::Full,
        };
        let per_axis = if atlas.q == 1 { 512 } else { 32 };
        if let Some(t) = sample_grid(atlas.q, per_axis)
            .iter()
            .find(|t| !(d.family.eval(t.coords()) >= 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "density negative at t = {:?}",
                t.coords()
            )));
        }
        Ok(d)
    }

    pub fn lebesgue(atlas: &Arc<FoliatedAtlas>) -> Self {
        Self::new(atlas, DensityFamily::Lebesgue).expect("unit density is valid")
    }

    /// `c · Λ`.
    pub fn scaled(&self, c: f64) -> Self {
        TransverseDensity {
            scale: self.scale * c,
            ..self.clone()
        }
    }

    /// `h_i(t)`.
    pub fn density(&self, _chart: usize, t: &[f64]) -> f64 {
        self.scale * self.family.eval(t)
    }

    /// `|h_j(h_ij(t)) · |det Dh_ij(t)| - h_i(t)|`.
    pub fn invariance_defect(&self, tr: &TransitionSpec, t: &[f64]) -> f64 {
        let image = self.atlas.transition_h(tr, t);
        let jac = self.atlas.transition_dh(tr, t).determinant().abs();
        (self.density(tr.to, &image) * jac - self.density(tr.from, t)).abs()
    }

    /// Largest invariance defect at transverse coordinate `t` (taken modulo
    /// 1) over the transitions whose domain reaches it.
    pub fn defect_at(&self, t: &[f64]) -> Option<f64> {
        let q = self.atlas.q;
        self.atlas
            .transitions
            .iter()
            .filter_map(|tr| {
                let lifted: Vec<f64> = (0..q)
                    .map(|a| {
                        let lo = tr.domain.lo[a];
                        lo + crate::torus::wrap_unit(t[a] - lo)
                    })
                    .collect();
                let inside = (0..q).all(|a| lifted[a] < tr.domain.lo[a] + tr.domain.width[a]);
                inside.then(|| self.invariance_defect(tr, &lifted))
            })
            .reduce(f64::max)
    }

    /// Max defect over `samples` transverse points per transition axis.
    pub fn check_holonomy_invariance(&self, samples: usize, tol: f64) -> InvarianceReport {
        let q = self.atlas.q;
        let per: Vec<InvarianceViolation> = self
            .atlas
            .transitions
            .par_iter()
            .filter_map(|tr| {
                sample_grid(q, samples)
                    .into_iter()
                    .map(|u| {
                        let t: Vec<f64> = (0..q)
                            .map(|a| tr.domain.lo[a] + u.coords()[a] * tr.domain.width[a])
                            .collect();
                        InvarianceViolation {
                            from: tr.from,
                            to: tr.to,
                            violation: self.invariance_defect(tr, &t),
                            t,
                        }
                    })
                    .max_by(|a, b| a.violation.total_cmp(&b.violation))
            })
            .collect();
        let count = per.len() * samples.pow(q as u32);
        let worst = per.into_iter().max_by(|a, b| {
            a.violation
                .total_cmp(&b.violation)
                .then(b.from.cmp(&a.from))
                .then(b.to.cmp(&a.to))
        });
        let max_violation = worst.as_ref().map_or(0.0, |w| w.violation);
        InvarianceReport {
            max_violation,
            worst,
            samples: count,
            tol,
            pass: max_violation <= tol,
        }
    }

    /// Λ-mass of the straight segment `[a, b]` (nearest representative) by
    /// the trapezoid rule in transverse chart coordinates.
    pub fn segment_mass(&self, a: &AmbientPoint, b: &AmbientPoint, assignment: ChartAssignment) -> Result<f64> {
        self.mass_of_segment(a, b, assignment, false)
    }

    /// Λ-mass of `[a, b]` signed by the direction of travel across the
    /// leaves. Leafwise segments have mass `0`.
    pub fn signed_segment_mass(&self, a: &AmbientPoint, b: &AmbientPoint, assignment: ChartAssignment) -> Result<f64> {
        self.mass_of_segment(a, b, assignment, true)
    }

    fn mass_of_segment(&self, a: &AmbientPoint, b: &AmbientPoint, assignment: ChartAssignment, signed: bool) -> Result<f64> {
        let atlas = &self.atlas;
        if atlas.q != 1 {
            return Err(Error::UnsupportedCodimension(atlas.q));
        }
        let ids: Vec<usize> = atlas
            .charts_containing(a)?
            .into_iter()
            .filter(|id| atlas.contains(*id, b))
            .collect();
        if ids.is_empty() {
            return Err(Error::NotInChart {
                chart: atlas.charts_containing(a)?[0],
                point: b.coords().to_vec(),
            });
        }
        let length = a.torus_distance(b);
        let chart_mass = |id: usize| -> Result<f64> {
            let ta = atlas.raw_coords(id, a)[0];
            let tb = atlas.raw_coords(id, b)[0];
            let dt = (tb - ta).abs();
            if signed {
                return Ok(0.5 * (self.density(id, &[ta]) + self.density(id, &[tb])) * (tb - ta));
            }
            if length > 0.0 && dt < TANGENCY_RATIO * length {
                return Err(Error::NotTransverse(format!(
                    "segment at {:?} has transverse extent {dt:.3e} over length {length:.3e}",
                    a.coords()
                )));
            }
            Ok(0.5 * (self.density(id, &[ta]) + self.density(id, &[tb])) * dt)
        };
        match assignment {
            ChartAssignment::FirstContaining => chart_mass(ids[0]),
            ChartAssignment::LastContaining => chart_mass(*ids.last().expect("nonempty")),
            ChartAssignment::PartitionOfUnity => {
                let mut weights: Vec<f64> = ids
                    .iter()
                    .map(|id| {
                        let ramp = (0..atlas.n)
                            .map(|ax| atlas.ramp_width(*id, ax))
                            .fold(f64::INFINITY, f64::min);
                        let d = atlas.boundary_distance(*id, a).min(atlas.boundary_distance(*id, b));
                        smoothstep(d / ramp)
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    weights.iter_mut().for_each(|w| *w = 1.0);
                }
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                for (id, w) in ids.iter().zip(&weights) {
                    if *w > 0.0 {
                        acc += w / total * chart_mass(*id)?;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Λ-mass of a polyline, closing it when `closed`.
    pub fn integrate_polyline(&self, points: &[AmbientPoint], closed: bool, assignment: ChartAssignment) -> Result<f64> {
        if points.len() < 2 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for w in points.windows(2) {
            total += self.segment_mass(&w[0], &w[1], assignment)?;
        }
        if closed {
            total += self.segment_mass(&points[points.len() - 1], &points[0], assignment)?;
        }
        Ok(total)
    }

    /// Weighted sum of density values over a discrete transversal.
    pub fn integrate_points(&self, points: &[(AmbientPoint, f64)]) -> Result<f64> {
        let q = self.atlas.q;
        points.iter().try_fold(0.0, |acc, (x, w)| {
            let id = self.atlas.charts_containing(x)?[0];
            let t = &self.atlas.raw_coords(id, x)[..q];
            Ok(acc + w * self.density(id, t))
        })
    }

    /// Max over samples of `|h(t(φx)) · |det ∂t'/∂t| - h(t(x))|`: the defect
    /// of the pushforward identity `φ_* Λ = Λ` on transversals.
    pub fn pushforward_defect(&self, map: &FoliationMapSpec, per_axis: usize) -> Result<f64> {
        let q = self.atlas.q;
        let target = &map.target;
        sample_grid(self.atlas.n, per_axis)
            .par_iter()
            .map(|x| {
                let cj = map.full_jacobian(x)?;
                let y = map.eval(x);
                let tx = &self.atlas.raw_coords(cj.source_chart, x)[..q];
                let ty = &target.raw_coords(cj.target_chart, &y)[..q];
                let block = cj.matrix.view((0, 0), (q, q)).determinant().abs();
                Ok((self.density(cj.target_chart, ty) * block - self.density(cj.source_chart, tx)).abs())
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
    }
}
