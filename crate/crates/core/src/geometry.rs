//! Foliated atlases on flat tori.
//!
//! A chart is a product box `T_i × B_i` in chart coordinates `(t, b)`, with
//! `t` the `q` transverse coordinates and `b` the `p` leaf coordinates; the
//! chart domain `U_i` is the preimage of that box. Two models are built in:
//!
//! * linear torus foliations, whose leaves are cosets of a coordinate
//!   subtorus and whose chart coordinates are the ambient coordinates;
//! * suspensions of a circle diffeomorphism `f` on `T²`, whose leaves wind
//!   around the base circle and return through `f` across the seam.
//!
//! Plaques are the fibers `t = const` of a chart.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::FourierSeries;
use crate::smooth::{smoothstep, smoothstep_deriv};
use crate::torus::{sample_grid, wrap_unit, AmbientPoint};

/// Absolute tolerance on transverse chart coordinates for plaque equality.
pub const TOL_PLAQUE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    LinearTorus,
    Product,
    Suspension,
}

/// Orientation-preserving circle diffeomorphism with lift
/// `F(t) = t + displacement(t)`, `displacement` 1-periodic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircleMap {
    pub displacement: FourierSeries,
}

impl CircleMap {
    pub fn rotation(rho: f64) -> Self {
        CircleMap {
            displacement: FourierSeries::constant(rho),
        }
    }

    pub fn new(displacement: FourierSeries) -> Self {
        CircleMap { displacement }
    }

    pub fn is_identity(&self) -> bool {
        self.displacement.is_zero()
    }

    pub fn lift(&self, t: f64) -> f64 {
        t + self.displacement.eval(&[t])
    }

    pub fn deriv(&self, t: f64) -> f64 {
        1.0 + self.displacement.gradient(&[t])[0]
    }

    /// Solves `F(t) = y` for the lift.
    pub fn inverse_lift(&self, y: f64) -> f64 {
        let c = self.displacement.constant;
        let a = self.displacement.amplitude_bound();
        solve_monotone(|t| self.lift(t), |t| self.deriv(t), y, y - c - a - 1e-12, y - c + a + 1e-12, y - c)
    }

    /// `(F^k(t), d/dt F^k(t))` for any integer `k`.
    pub fn iterate(&self, k: i64, t: f64) -> (f64, f64) {
        let mut v = t;
        let mut d = 1.0;
        if k >= 0 {
            for _ in 0..k {
                d *= self.deriv(v);
                v = self.lift(v);
            }
        } else {
            for _ in 0..(-k) {
                v = self.inverse_lift(v);
                d /= self.deriv(v);
            }
        }
        (v, d)
    }

    /// Checks `F' > 0` on a dense sample of the circle.
    pub fn validate(&self) -> Result<()> {
        const SAMPLES: usize = 4096;
        for i in 0..SAMPLES {
            let t = i as f64 / SAMPLES as f64;
            let d = self.deriv(t);
            if !(d > 1e-9) || !d.is_finite() {
                return Err(Error::MonodromyNotInvertible(format!(
                    "derivative {d:.3e} at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Safeguarded Newton for an increasing function on a bracketing interval.
fn solve_monotone(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    y: f64,
    mut lo: f64,
    mut hi: f64,
    guess: f64,
) -> f64 {
    let mut t = guess.clamp(lo, hi);
    for _ in 0..200 {
        let r = f(t) - y;
        if r == 0.0 {
            return t;
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let d = df(t);
        let mut next = t - r / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-16 * (1.0 + t.abs()) || hi - lo <= 1e-16 * (1.0 + t.abs()) {
            return next;
        }
        t = next;
    }
    t
}

/// Leaf structure of a built-in model.
#[derive(Clone, Debug, PartialEq)]
pub enum FoliationModel {
    Linear {
        transverse_axes: Vec<usize>,
        leaf_axes: Vec<usize>,
    },
    /// Ambient `(s, y)`: base circle `s` (leaf coordinate), fiber `y`.
    Suspension { monodromy: CircleMap },
}

impl FoliationModel {
    fn dims(&self) -> (usize, usize, usize) {
        match self {
            FoliationModel::Linear {
                transverse_axes,
                leaf_axes,
            } => (
                transverse_axes.len() + leaf_axes.len(),
                leaf_axes.len(),
                transverse_axes.len(),
            ),
            FoliationModel::Suspension { .. } => (2, 1, 1),
        }
    }

    /// Value and partials `(value, ∂/∂t, ∂/∂u)` of the leaf graph `y = Γ_u(t)`
    /// of the suspension, extended to all `u` by `Γ_{u+1} = Γ_u ∘ F`.
    fn gamma(f: &CircleMap, u: f64, t: f64) -> (f64, f64, f64) {
        let k = u.floor();
        let r = u - k;
        let (big_t, dk) = f.iterate(k as i64, t);
        let beta = smoothstep(r);
        let ft = f.lift(big_t);
        let value = (1.0 - beta) * big_t + beta * ft;
        let d_big_t = (1.0 - beta) + beta * f.deriv(big_t);
        let du = smoothstep_deriv(r) * (ft - big_t);
        (value, d_big_t * dk, du)
    }

    fn gamma_inv(f: &CircleMap, u: f64, y: f64) -> f64 {
        let k = u.floor();
        let r = u - k;
        let beta = smoothstep(r);
        let c = f.displacement.constant;
        let a = f.displacement.amplitude_bound();
        let big_t = solve_monotone(
            |s| (1.0 - beta) * s + beta * f.lift(s),
            |s| (1.0 - beta) + beta * f.deriv(s),
            y,
            y - beta * (c.abs() + a) - 1e-12,
            y + beta * (c.abs() + a) + 1e-12,
            y - beta * c,
        );
        f.iterate(-(k as i64), big_t).0
    }

    /// Chart coordinates `[t.., b..]`, each unwrapped into `[lo, lo + 1)`.
    fn chart_coords(&self, x: &[f64], lo: &[f64]) -> Vec<f64> {
        let unwrap = |v: f64, l: f64| l + wrap_unit(v - l);
        match self {
            FoliationModel::Linear {
                transverse_axes,
                leaf_axes,
            } => transverse_axes
                .iter()
                .chain(leaf_axes)
                .zip(lo)
                .map(|(a, l)| unwrap(x[*a], *l))
                .collect(),
            FoliationModel::Suspension { monodromy } => {
                let u = unwrap(x[0], lo[1]);
                let t_raw = Self::gamma_inv(monodromy, u, x[1]);
                vec![unwrap(t_raw, lo[0]), u]
            }
        }
    }

    fn ambient(&self, c: &[f64]) -> AmbientPoint {
        match self {
            FoliationModel::Linear {
                transverse_axes,
                leaf_axes,
            } => {
                let mut x = vec![0.0; transverse_axes.len() + leaf_axes.len()];
                for (a, v) in transverse_axes.iter().chain(leaf_axes).zip(c) {
                    x[*a] = *v;
                }
                AmbientPoint::new(x)
            }
            FoliationModel::Suspension { monodromy } => {
                let (y, _, _) = Self::gamma(monodromy, c[1], c[0]);
                AmbientPoint::new(vec![c[1], y])
            }
        }
    }

    /// `∂(t, b) / ∂x` at the point with chart coordinates `c`.
    fn coord_jacobian(&self, c: &[f64]) -> DMatrix<f64> {
        match self {
            FoliationModel::Linear {
                transverse_axes,
                leaf_axes,
            } => {
                let n = transverse_axes.len() + leaf_axes.len();
                let mut m = DMatrix::zeros(n, n);
                for (row, a) in transverse_axes.iter().chain(leaf_axes).enumerate() {
                    m[(row, *a)] = 1.0;
                }
                m
            }
            FoliationModel::Suspension { monodromy } => {
                let (_, g_t, g_u) = Self::gamma(monodromy, c[1], c[0]);
                DMatrix::from_row_slice(2, 2, &[-g_u / g_t, 1.0 / g_t, 1.0, 0.0])
            }
        }
    }

    /// Transverse part of the coordinate change for leaf shift `k = b' - b`.
    fn holonomy(&self, k: &[i64], t: &[f64]) -> Vec<f64> {
        match self {
            FoliationModel::Linear { .. } => t.to_vec(),
            FoliationModel::Suspension { monodromy } => vec![monodromy.iterate(-k[0], t[0]).0],
        }
    }

    fn holonomy_jacobian(&self, k: &[i64], t: &[f64]) -> DMatrix<f64> {
        match self {
            FoliationModel::Linear { .. } => DMatrix::identity(t.len(), t.len()),
            FoliationModel::Suspension { monodromy } => {
                DMatrix::from_element(1, 1, monodromy.iterate(-k[0], t[0]).1)
            }
        }
    }

    fn same_leaf(&self, a: &[f64], b: &[f64]) -> Option<bool> {
        match self {
            FoliationModel::Linear {
                transverse_axes, ..
            } => Some(transverse_axes.iter().all(|ax| {
                let d = a[*ax] - b[*ax];
                (d - d.round()).abs() <= TOL_PLAQUE
            })),
            FoliationModel::Suspension { .. } => None,
        }
    }
}

/// Open box `Π (lo_a, lo_a + width_a)` in chart coordinates `[t.., b..]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBox {
    pub lo: Vec<f64>,
    pub width: Vec<f64>,
}

impl CoordBox {
    pub fn contains(&self, c: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.width)
            .zip(c)
            .all(|((l, w), v)| *v > *l && *v < l + w)
    }

    /// Smallest distance to a face; non-positive outside the box.
    pub fn boundary_distance(&self, c: &[f64]) -> f64 {
        self.lo
            .iter()
            .zip(&self.width)
            .zip(c)
            .map(|((l, w), v)| (v - l).min(l + w - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn shrunk(&self, margin: &[f64]) -> CoordBox {
        CoordBox {
            lo: self.lo.iter().zip(margin).map(|(l, m)| l + m).collect(),
            width: self
                .width
                .iter()
                .zip(margin)
                .map(|(w, m)| w - 2.0 * m)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub id: usize,
    /// `θ_i(U_i)`, ordered `[t.., b..]`.
    pub window: CoordBox,
    pub leaf_orientation: i8,
    pub transverse_orientation: i8,
}

/// Coordinate change between two charts on one connected overlap piece:
/// `t' = h(t) = hol_k(t) + m`, `b' = g(t, b) = b + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub from: usize,
    pub to: usize,
    pub leaf_shift: Vec<i64>,
    pub transverse_shift: Vec<i64>,
    /// Overlap piece in the coordinates of chart `from`.
    pub domain: CoordBox,
}

/// Distinguished box containing the union of two meeting chart domains,
/// expressed in the coordinates of the first chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityWitness {
    pub charts: (usize, usize),
    pub hull: CoordBox,
}

/// Atlas granularity: cells per transverse and per leaf axis, and the
/// per-side extension of each cell as a fraction of the cell width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasOptions {
    #[serde(default = "default_cells")]
    pub transverse_cells: usize,
    #[serde(default = "default_cells")]
    pub leaf_cells: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_cells() -> usize {
    3
}

fn default_margin() -> f64 {
    0.15
}

impl Default for AtlasOptions {
    fn default() -> Self {
        AtlasOptions {
            transverse_cells: default_cells(),
            leaf_cells: default_cells(),
            margin: default_margin(),
        }
    }
}

impl AtlasOptions {
    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn with_cells(mut self, transverse: usize, leaf: usize) -> Self {
        self.transverse_cells = transverse;
        self.leaf_cells = leaf;
        self
    }

    /// Overlap of neighboring boxes as a fraction of the box width.
    pub fn overlap_fraction(&self) -> f64 {
        2.0 * self.margin / (1.0 + 2.0 * self.margin)
    }

    fn validate(&self) -> Result<()> {
        for cells in [self.transverse_cells, self.leaf_cells] {
            if cells < 2 {
                return Err(Error::InvalidParameter(format!(
                    "at least 2 cells per axis required, got {cells}"
                )));
            }
            if (1.0 + 2.0 * self.margin) / cells as f64 >= 1.0 {
                return Err(Error::InvalidParameter(
                    "chart boxes must be narrower than the torus".into(),
                ));
            }
        }
        if self.overlap_fraction() < 0.2 - 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "overlap fraction {:.3} below 0.2",
                self.overlap_fraction()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FoliatedAtlas {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub model: FoliationModel,
    pub tag: ModelTag,
    pub charts: Vec<ChartSpec>,
    pub transitions: Vec<TransitionSpec>,
    pub regular: bool,
    pub witnesses: Vec<RegularityWitness>,
    pub options: AtlasOptions,
}

/// Integers `k` with `(a + k, a + w + k) ∩ (c, c + v) ≠ ∅`.
fn interval_shifts(a: f64, w: f64, c: f64, v: f64) -> Vec<i64> {
    let lo = (c - a - w).floor() as i64 + 1;
    let hi = (c + v - a).ceil() as i64 - 1;
    (lo..=hi)
        .filter(|k| {
            let k = *k as f64;
            (a + w + k).min(c + v) > (a + k).max(c)
        })
        .collect()
}

fn cartesian(choices: &[Vec<i64>]) -> Vec<Vec<i64>> {
    choices.iter().fold(vec![Vec::new()], |acc, opts| {
        acc.iter()
            .flat_map(|prefix| {
                opts.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.push(*o);
                    v
                })
            })
            .collect()
    })
}

/// Sample count per axis for the covering check, `64^min(n,3)` points total.
fn covering_per_axis(n: usize) -> usize {
    let total = 64f64.powi(n.min(3) as i32);
    (total.powf(1.0 / n as f64).round() as usize).max(2)
}

impl FoliatedAtlas {
    /// Foliation of `T^n` by the cosets of the coordinate subtorus spanned by
    /// `leaf_axes`.
    pub fn linear_torus(n: usize, leaf_axes: &[usize], options: AtlasOptions) -> Result<Self> {
        let mut leaf: Vec<usize> = leaf_axes.to_vec();
        leaf.sort_unstable();
        leaf.dedup();
        if n == 0 || leaf.len() != leaf_axes.len() || leaf.iter().any(|a| *a >= n) {
            return Err(Error::BadSplit(format!(
                "leaf axes {leaf_axes:?} are not distinct axes of T^{n}"
            )));
        }
        if leaf.is_empty() || leaf.len() >= n {
            return Err(Error::BadSplit(format!(
                "need 1 <= p < n, got p = {} and n = {n}",
                leaf.len()
            )));
        }
        let transverse: Vec<usize> = (0..n).filter(|a| !leaf.contains(a)).collect();
        Self::build(
            FoliationModel::Linear {
                transverse_axes: transverse,
                leaf_axes: leaf,
            },
            ModelTag::LinearTorus,
            options,
        )
    }

    /// Suspension of `monodromy` on `T²`: holonomy around the base circle is
    /// the monodromy. Identity monodromy gives the product foliation.
    pub fn suspension(monodromy: CircleMap, options: AtlasOptions) -> Result<Self> {
        monodromy.validate()?;
        let tag = if monodromy.is_identity() {
            ModelTag::Product
        } else {
            ModelTag::Suspension
        };
        Self::build(FoliationModel::Suspension { monodromy }, tag, options)
    }

    fn build(model: FoliationModel, tag: ModelTag, options: AtlasOptions) -> Result<Self> {
        options.validate()?;
        let (n, p, q) = model.dims();
        let cells: Vec<usize> = (0..n)
            .map(|a| {
                if a < q {
                    options.transverse_cells
                } else {
                    options.leaf_cells
                }
            })
            .collect();
        let total: usize = cells.iter().product();
        let charts = (0..total)
            .map(|id| {
                let mut rest = id;
                let mut lo = Vec::with_capacity(n);
                let mut width = Vec::with_capacity(n);
                for k in &cells {
                    let j = rest % k;
                    rest /= k;
                    let cell = 1.0 / *k as f64;
                    lo.push(j as f64 * cell - options.margin * cell);
                    width.push((1.0 + 2.0 * options.margin) * cell);
                }
                ChartSpec {
                    id,
                    window: CoordBox { lo, width },
                    leaf_orientation: 1,
                    transverse_orientation: 1,
                }
            })
            .collect();
        let mut atlas = FoliatedAtlas {
            n,
            p,
            q,
            model,
            tag,
            charts,
            transitions: Vec::new(),
            regular: false,
            witnesses: Vec::new(),
            options,
        };
        atlas.transitions = atlas.enumerate_transitions();
        atlas.check_regularity();
        atlas.verify_covering(covering_per_axis(n))?;
        Ok(atlas)
    }

    /// Same foliation with every chart's leaf frame multiplied by `sign`.
    pub fn with_leaf_orientation(&self, sign: i8) -> FoliatedAtlas {
        let mut out = self.clone();
        for c in out.charts.iter_mut() {
            c.leaf_orientation = sign.signum();
        }
        out
    }

    /// Whether `other` describes the same foliation through the same charts.
    pub fn same_foliation(&self, other: &FoliatedAtlas) -> bool {
        self.model == other.model && self.options == other.options
    }

    fn enumerate_transitions(&self) -> Vec<TransitionSpec> {
        let q = self.q;
        let mut out = Vec::new();
        for ci in &self.charts {
            for cj in &self.charts {
                if ci.id == cj.id {
                    continue;
                }
                let (wi, wj) = (&ci.window, &cj.window);
                let leaf_choices: Vec<Vec<i64>> = (q..self.n)
                    .map(|a| interval_shifts(wi.lo[a], wi.width[a], wj.lo[a], wj.width[a]))
                    .collect();
                for k in cartesian(&leaf_choices) {
                    let lo_img = self.model.holonomy(&k, &wi.lo[..q]);
                    let hi_t: Vec<f64> = (0..q).map(|a| wi.lo[a] + wi.width[a]).collect();
                    let hi_img = self.model.holonomy(&k, &hi_t);
                    let trans_choices: Vec<Vec<i64>> = (0..q)
                        .map(|a| {
                            interval_shifts(
                                lo_img[a],
                                hi_img[a] - lo_img[a],
                                wj.lo[a],
                                wj.width[a],
                            )
                        })
                        .collect();
                    for m in cartesian(&trans_choices) {
                        let back_lo: Vec<f64> =
                            (0..q).map(|a| wj.lo[a] - m[a] as f64).collect();
                        let back_hi: Vec<f64> =
                            (0..q).map(|a| wj.lo[a] + wj.width[a] - m[a] as f64).collect();
                        let neg_k: Vec<i64> = k.iter().map(|v| -v).collect();
                        let pre_lo = self.model.holonomy(&neg_k, &back_lo);
                        let pre_hi = self.model.holonomy(&neg_k, &back_hi);
                        let mut lo = Vec::with_capacity(self.n);
                        let mut width = Vec::with_capacity(self.n);
                        for a in 0..self.n {
                            let (l, h) = if a < q {
                                (pre_lo[a].max(wi.lo[a]), pre_hi[a].min(wi.lo[a] + wi.width[a]))
                            } else {
                                let s = k[a - q] as f64;
                                (
                                    wi.lo[a].max(wj.lo[a] - s),
                                    (wi.lo[a] + wi.width[a]).min(wj.lo[a] + wj.width[a] - s),
                                )
                            };
                            lo.push(l);
                            width.push(h - l);
                        }
                        if width.iter().all(|w| *w > 0.0) {
                            out.push(TransitionSpec {
                                from: ci.id,
                                to: cj.id,
                                leaf_shift: k.clone(),
                                transverse_shift: m,
                                domain: CoordBox { lo, width },
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn check_regularity(&mut self) {
        let q = self.q;
        let mut regular = true;
        let mut witnesses = Vec::new();
        for ci in &self.charts {
            for cj in self.charts.iter().filter(|c| c.id > ci.id) {
                let pieces: Vec<&TransitionSpec> = self
                    .transitions
                    .iter()
                    .filter(|t| t.from == ci.id && t.to == cj.id)
                    .collect();
                match pieces.as_slice() {
                    [] => {}
                    [tr] => {
                        let (wi, wj) = (&ci.window, &cj.window);
                        let neg_k: Vec<i64> = tr.leaf_shift.iter().map(|v| -v).collect();
                        let back_lo: Vec<f64> =
                            (0..q).map(|a| wj.lo[a] - tr.transverse_shift[a] as f64).collect();
                        let back_hi: Vec<f64> = (0..q)
                            .map(|a| wj.lo[a] + wj.width[a] - tr.transverse_shift[a] as f64)
                            .collect();
                        let pre_lo = self.model.holonomy(&neg_k, &back_lo);
                        let pre_hi = self.model.holonomy(&neg_k, &back_hi);
                        let mut lo = Vec::new();
                        let mut width = Vec::new();
                        for a in 0..self.n {
                            let (l2, h2) = if a < q {
                                (pre_lo[a], pre_hi[a])
                            } else {
                                let s = tr.leaf_shift[a - q] as f64;
                                (wj.lo[a] - s, wj.lo[a] + wj.width[a] - s)
                            };
                            let l = wi.lo[a].min(l2);
                            let h = (wi.lo[a] + wi.width[a]).max(h2);
                            lo.push(l);
                            width.push(h - l);
                        }
                        if width.iter().any(|w| *w >= 1.0) {
                            regular = false;
                        } else {
                            witnesses.push(RegularityWitness {
                                charts: (ci.id, cj.id),
                                hull: CoordBox { lo, width },
                            });
                        }
                    }
                    _ => regular = false,
                }
            }
        }
        self.regular = regular;
        self.witnesses = witnesses;
    }

    /// Checks that every point of a `per_axis^n` grid lies in some chart.
    pub fn verify_covering(&self, per_axis: usize) -> Result<()> {
        let grid = sample_grid(self.n, per_axis);
        let bad = grid
            .par_iter()
            .find_first(|x| !self.charts.iter().any(|c| self.contains(c.id, x)));
        match bad {
            Some(x) => Err(Error::CoveringViolated(x.coords().to_vec())),
            None => Ok(()),
        }
    }

    pub fn chart(&self, id: usize) -> Result<&ChartSpec> {
        self.charts.get(id).ok_or(Error::UnknownChart(id))
    }

    /// Chart coordinates `[t.., b..]` unwrapped relative to the chart window,
    /// without checking membership.
    pub fn raw_coords(&self, id: usize, x: &AmbientPoint) -> Vec<f64> {
        self.model.chart_coords(x.coords(), &self.charts[id].window.lo)
    }

    pub fn contains(&self, id: usize, x: &AmbientPoint) -> bool {
        self.charts[id].window.contains(&self.raw_coords(id, x))
    }

    pub fn boundary_distance(&self, id: usize, x: &AmbientPoint) -> f64 {
        self.charts[id]
            .window
            .boundary_distance(&self.raw_coords(id, x))
    }

    /// Chart coordinates of `x`, split into `(t, b)`.
    pub fn to_coords(&self, id: usize, x: &AmbientPoint) -> Result<(Vec<f64>, Vec<f64>)> {
        let chart = self.chart(id)?;
        let mut c = self.raw_coords(id, x);
        if !chart.window.contains(&c) {
            return Err(Error::NotInChart {
                chart: id,
                point: x.coords().to_vec(),
            });
        }
        let b = c.split_off(self.q);
        Ok((c, b))
    }

    pub fn from_coords(&self, _id: usize, t: &[f64], b: &[f64]) -> AmbientPoint {
        let c: Vec<f64> = t.iter().chain(b).copied().collect();
        self.model.ambient(&c)
    }

    /// Charts whose domain contains `x`, farthest from the box boundary first.
    pub fn charts_containing(&self, x: &AmbientPoint) -> Result<Vec<usize>> {
        let mut found: Vec<(usize, f64)> = self
            .charts
            .iter()
            .filter_map(|c| {
                let coords = self.raw_coords(c.id, x);
                c.window
                    .contains(&coords)
                    .then(|| (c.id, c.window.boundary_distance(&coords)))
            })
            .collect();
        if found.is_empty() {
            return Err(Error::CoveringViolated(x.coords().to_vec()));
        }
        found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(found.into_iter().map(|(id, _)| id).collect())
    }

    pub fn same_plaque(&self, id: usize, a: &AmbientPoint, b: &AmbientPoint) -> Result<bool> {
        let (ta, _) = self.to_coords(id, a)?;
        let (tb, _) = self.to_coords(id, b)?;
        Ok(ta
            .iter()
            .zip(&tb)
            .all(|(u, v)| (u - v).abs() <= TOL_PLAQUE))
    }

    /// A chart in one of whose plaques both points lie, if any. The accepted
    /// pairs form the good local saturation of the diagonal.
    pub fn in_good_saturation(&self, x: &AmbientPoint, y: &AmbientPoint) -> Option<usize> {
        let ids = self.charts_containing(x).ok()?;
        ids.into_iter()
            .find(|id| self.contains(*id, y) && self.same_plaque(*id, x, y).unwrap_or(false))
    }

    /// Smallest transverse-coordinate gap `max_a |t_a(x) - t_a(y)|` over
    /// charts containing both points; `None` when no chart contains both.
    pub fn transverse_gap(&self, x: &AmbientPoint, y: &AmbientPoint) -> Option<f64> {
        self.charts
            .iter()
            .filter(|c| self.contains(c.id, x) && self.contains(c.id, y))
            .map(|c| {
                let cx = self.raw_coords(c.id, x);
                let cy = self.raw_coords(c.id, y);
                (0..self.q)
                    .map(|a| (cx[a] - cy[a]).abs())
                    .fold(0.0, f64::max)
            })
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Model-exact leaf membership, when decidable.
    pub fn same_leaf(&self, a: &AmbientPoint, b: &AmbientPoint) -> Option<bool> {
        self.model.same_leaf(a.coords(), b.coords())
    }

    /// Coordinates in chart `j` of the point with coordinates `(t, b)` in chart `i`.
    pub fn apply_transition(
        &self,
        i: usize,
        j: usize,
        t: &[f64],
        b: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (ci, cj) = (self.chart(i)?, self.chart(j)?);
        let out_of_overlap = || Error::NotInOverlap { from: i, to: j };
        let c: Vec<f64> = t.iter().chain(b).copied().collect();
        if !ci.window.contains(&c) {
            return Err(out_of_overlap());
        }
        if i == j {
            return Ok((t.to_vec(), b.to_vec()));
        }
        let q = self.q;
        let k: Vec<i64> = b
            .iter()
            .enumerate()
            .map(|(a, v)| (cj.window.lo[q + a] - v).floor() as i64 + 1)
            .collect();
        let b2: Vec<f64> = b.iter().zip(&k).map(|(v, s)| v + *s as f64).collect();
        let t_img = self.model.holonomy(&k, t);
        let t2: Vec<f64> = t_img
            .iter()
            .enumerate()
            .map(|(a, v)| v + ((cj.window.lo[a] - v).floor() + 1.0))
            .collect();
        let c2: Vec<f64> = t2.iter().chain(&b2).copied().collect();
        if !cj.window.contains(&c2) {
            return Err(out_of_overlap());
        }
        Ok((t2, b2))
    }

    /// `∂(t, b)/∂x` of chart `id` at `x`.
    pub fn coord_jacobian(&self, id: usize, x: &AmbientPoint) -> DMatrix<f64> {
        self.model.coord_jacobian(&self.raw_coords(id, x))
    }

    /// Oriented leaf frame at `x`: columns `± ∂x/∂b_a` (sign from the chart's
    /// leaf orientation), an `n × p` matrix.
    pub fn leaf_frame(&self, id: usize, x: &AmbientPoint) -> DMatrix<f64> {
        let inv = self
            .coord_jacobian(id, x)
            .try_inverse()
            .expect("chart coordinate maps are diffeomorphisms");
        inv.columns(self.q, self.p).into_owned() * f64::from(self.charts[id].leaf_orientation)
    }

    /// Oriented leaf coordinate differential at `x`, a `p × n` matrix.
    pub fn leaf_covector(&self, id: usize, x: &AmbientPoint) -> DMatrix<f64> {
        self.coord_jacobian(id, x).rows(self.q, self.p).into_owned()
            * f64::from(self.charts[id].leaf_orientation)
    }

    /// Transverse coordinate differential at `x`, a `q × n` matrix.
    pub fn transverse_covector(&self, id: usize, x: &AmbientPoint) -> DMatrix<f64> {
        self.coord_jacobian(id, x).rows(0, self.q).into_owned()
            * f64::from(self.charts[id].transverse_orientation)
    }

    pub fn transition_h(&self, tr: &TransitionSpec, t: &[f64]) -> Vec<f64> {
        self.model
            .holonomy(&tr.leaf_shift, t)
            .iter()
            .zip(&tr.transverse_shift)
            .map(|(v, m)| v + *m as f64)
            .collect()
    }

    pub fn transition_g(&self, tr: &TransitionSpec, _t: &[f64], b: &[f64]) -> Vec<f64> {
        b.iter()
            .zip(&tr.leaf_shift)
            .map(|(v, k)| v + *k as f64)
            .collect()
    }

    pub fn transition_dh(&self, tr: &TransitionSpec, t: &[f64]) -> DMatrix<f64> {
        self.model.holonomy_jacobian(&tr.leaf_shift, t)
    }

    /// `1` on the chart window shrunk by the overlap margin (the chart's
    /// cell), decaying smoothly to `0` at the window boundary.
    pub fn chart_bump(&self, id: usize, x: &AmbientPoint) -> f64 {
        let chart = &self.charts[id];
        let c = self.raw_coords(id, x);
        if !chart.window.contains(&c) {
            return 0.0;
        }
        chart
            .window
            .lo
            .iter()
            .zip(&chart.window.width)
            .zip(&c)
            .map(|((l, w), v)| {
                let ramp = w * self.options.margin / (1.0 + 2.0 * self.options.margin);
                smoothstep((v - l).min(l + w - v) / ramp)
            })
            .product()
    }

    /// [`chart_bump`](Self::chart_bump) and its gradient in chart coordinates.
    pub fn chart_bump_with_grad(&self, id: usize, x: &AmbientPoint) -> (f64, Vec<f64>) {
        let chart = &self.charts[id];
        let c = self.raw_coords(id, x);
        if !chart.window.contains(&c) {
            return (0.0, vec![0.0; self.n]);
        }
        let mut vals = Vec::with_capacity(self.n);
        let mut ders = Vec::with_capacity(self.n);
        for a in 0..self.n {
            let (l, w) = (chart.window.lo[a], chart.window.width[a]);
            let ramp = self.ramp_width(id, a);
            let (d, dir) = if c[a] - l <= l + w - c[a] {
                (c[a] - l, 1.0)
            } else {
                (l + w - c[a], -1.0)
            };
            vals.push(smoothstep(d / ramp));
            ders.push(dir * smoothstep_deriv(d / ramp) / ramp);
        }
        let value: f64 = vals.iter().product();
        let grad = (0..self.n)
            .map(|a| {
                (0..self.n)
                    .map(|b| if a == b { ders[b] } else { vals[b] })
                    .product()
            })
            .collect();
        (value, grad)
    }

    /// Width of the overlap margin of chart `id` along chart axis `a`.
    pub fn ramp_width(&self, id: usize, a: usize) -> f64 {
        self.charts[id].window.width[a] * self.options.margin / (1.0 + 2.0 * self.options.margin)
    }
}

/// Foliation of `T^n` by cosets of the coordinate subtorus on `leaf_axes`,
/// with default granularity.
pub fn make_linear_torus_foliation(n: usize, leaf_axes: &[usize]) -> Result<FoliatedAtlas> {
    FoliatedAtlas::linear_torus(n, leaf_axes, AtlasOptions::default())
}

/// Suspension of `monodromy` with default granularity.
pub fn make_suspension(monodromy: CircleMap) -> Result<FoliatedAtlas> {
    FoliatedAtlas::suspension(monodromy, AtlasOptions::default())
}
