//! Numerically evaluable foliation maps, their Jacobians, leaf-space
//! compatibility, and strong-plaquewise neighborhoods.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::FourierSeries;
use crate::geometry::{FoliatedAtlas, FoliationModel, TOL_PLAQUE};
use crate::smooth::smoothstep;
use crate::torus::{nearest_rep, sample_grid, AmbientPoint};

/// Base step of the central differences, in ambient coordinates.
pub const FD_STEP: f64 = 1e-4;

/// Tolerance on transverse coordinates of stencil images in the plaque
/// locality check.
const TOL_STENCIL: f64 = 1e-8;

/// A torus self-map. Implementors must be pure so they can be called from
/// many threads.
pub trait MapEvaluator: Send + Sync + fmt::Debug {
    fn eval(&self, x: &AmbientPoint) -> AmbientPoint;

    /// Analytic Jacobian in ambient coordinates, when available.
    fn exact_jacobian(&self, _x: &AmbientPoint) -> Option<DMatrix<f64>> {
        None
    }

    /// Starting point for Newton inversion at `y`.
    fn inverse_guess(&self, y: &AmbientPoint) -> AmbientPoint {
        y.clone()
    }
}

/// Central differences at `h` and `h/2` combined by one Richardson step.
pub fn fd_jacobian(f: &dyn Fn(&AmbientPoint) -> AmbientPoint, x: &AmbientPoint) -> Result<DMatrix<f64>> {
    let n = x.dim();
    let central = |h: f64| {
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = h;
            let plus = f(&x.translated(&e));
            e[j] = -h;
            let minus = f(&x.translated(&e));
            for (i, v) in minus.displacement_to(&plus).iter().enumerate() {
                d[(i, j)] = v / (2.0 * h);
            }
        }
        d
    };
    let coarse = central(FD_STEP);
    let fine = central(FD_STEP / 2.0);
    let rich = (&fine * 4.0 - &coarse) / 3.0;
    let scale = 1.0 + rich.amax();
    if !rich.iter().all(|v| v.is_finite()) || (&fine - &coarse).amax() > 1e-2 * scale {
        return Err(Error::NotDifferentiable(x.coords().to_vec()));
    }
    Ok(rich)
}

#[derive(Debug, Clone)]
pub struct IdentityMap;

impl MapEvaluator for IdentityMap {
    fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
        x.clone()
    }

    fn exact_jacobian(&self, x: &AmbientPoint) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(x.dim(), x.dim()))
    }
}

#[derive(Debug, Clone)]
pub struct TranslationMap {
    pub offset: Vec<f64>,
}

impl MapEvaluator for TranslationMap {
    fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
        x.translated(&self.offset)
    }

    fn exact_jacobian(&self, x: &AmbientPoint) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(x.dim(), x.dim()))
    }
}

/// `(t, v) ↦ (t, A v + offset(t) + leaf_terms(v))` on a linear torus
/// foliation, with `A` an integer matrix so the map descends to the torus.
#[derive(Debug, Clone)]
pub struct LeafAffineMap {
    transverse_axes: Vec<usize>,
    leaf_axes: Vec<usize>,
    matrix: DMatrix<f64>,
    offset: Vec<FourierSeries>,
    leaf_terms: Vec<FourierSeries>,
}

impl LeafAffineMap {
    fn split(&self, x: &AmbientPoint) -> (Vec<f64>, Vec<f64>) {
        let c = x.coords();
        (
            self.transverse_axes.iter().map(|a| c[*a]).collect(),
            self.leaf_axes.iter().map(|a| c[*a]).collect(),
        )
    }
}

impl MapEvaluator for LeafAffineMap {
    fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
        let (t, v) = self.split(x);
        let av = &self.matrix * DVector::from_column_slice(&v);
        let mut out = x.coords().to_vec();
        for (row, axis) in self.leaf_axes.iter().enumerate() {
            out[*axis] = av[row] + self.offset[row].eval(&t) + self.leaf_terms[row].eval(&v);
        }
        AmbientPoint::new(out)
    }

    fn exact_jacobian(&self, x: &AmbientPoint) -> Option<DMatrix<f64>> {
        let n = x.dim();
        let (t, v) = self.split(x);
        let mut j = DMatrix::identity(n, n);
        for (row, axis) in self.leaf_axes.iter().enumerate() {
            let gt = self.offset[row].gradient(&t);
            let gv = self.leaf_terms[row].gradient(&v);
            for (k, ta) in self.transverse_axes.iter().enumerate() {
                j[(*axis, *ta)] = gt[k];
            }
            for (k, la) in self.leaf_axes.iter().enumerate() {
                j[(*axis, *la)] = self.matrix[(row, k)] + gv[k];
            }
        }
        Some(j)
    }

    fn inverse_guess(&self, y: &AmbientPoint) -> AmbientPoint {
        let (t, v) = self.split(y);
        let rhs = DVector::from_iterator(
            v.len(),
            v.iter().zip(&self.offset).map(|(val, o)| val - o.eval(&t)),
        );
        let Some(sol) = self.matrix.clone().lu().solve(&rhs) else {
            return y.clone();
        };
        let mut out = y.coords().to_vec();
        for (row, axis) in self.leaf_axes.iter().enumerate() {
            out[*axis] = sol[row];
        }
        AmbientPoint::new(out)
    }
}

/// `second ∘ first`.
#[derive(Debug, Clone)]
pub struct CompositeMap {
    pub first: Arc<dyn MapEvaluator>,
    pub second: Arc<dyn MapEvaluator>,
}

impl MapEvaluator for CompositeMap {
    fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
        self.second.eval(&self.first.eval(x))
    }

    fn exact_jacobian(&self, x: &AmbientPoint) -> Option<DMatrix<f64>> {
        let j1 = self.first.exact_jacobian(x)?;
        let j2 = self.second.exact_jacobian(&self.first.eval(x))?;
        Some(j2 * j1)
    }

    fn inverse_guess(&self, y: &AmbientPoint) -> AmbientPoint {
        self.first.inverse_guess(&self.second.inverse_guess(y))
    }
}

/// Pointwise Newton inverse of a map with invertible Jacobian.
#[derive(Debug, Clone)]
pub struct NewtonInverse {
    pub map: Arc<dyn MapEvaluator>,
}

impl NewtonInverse {
    fn jacobian(&self, x: &AmbientPoint) -> DMatrix<f64> {
        match self.map.exact_jacobian(x) {
            Some(j) => j,
            None => fd_jacobian(&|p: &AmbientPoint| self.map.eval(p), x)
                .unwrap_or_else(|_| DMatrix::identity(x.dim(), x.dim())),
        }
    }
}

impl MapEvaluator for NewtonInverse {
    fn eval(&self, y: &AmbientPoint) -> AmbientPoint {
        let mut x = self.map.inverse_guess(y);
        for _ in 0..60 {
            let r = self.map.eval(&x).displacement_to(y);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-15 {
                break;
            }
            let Some(dx) = self.jacobian(&x).lu().solve(&DVector::from_vec(r)) else {
                break;
            };
            x = x.translated(dx.as_slice());
        }
        x
    }

    fn exact_jacobian(&self, y: &AmbientPoint) -> Option<DMatrix<f64>> {
        let x = self.eval(y);
        self.map.exact_jacobian(&x)?.try_inverse()
    }
}

/// Composition `S_N ∘ … ∘ S_1` of chart-wise leaf shifts
/// `S_i: (t, b) ↦ (t, b + λ_i(t, b) c_i)`, with `λ_i` the chart bump of
/// chart `i`.
#[derive(Debug, Clone)]
pub struct LeafBumpShift {
    pub atlas: Arc<FoliatedAtlas>,
    pub shifts: Vec<(usize, Vec<f64>)>,
}

impl LeafBumpShift {
    fn step(&self, id: usize, c: &[f64], y: &AmbientPoint) -> AmbientPoint {
        let lambda = self.atlas.chart_bump(id, y);
        if lambda == 0.0 {
            return y.clone();
        }
        let mut coords = self.atlas.raw_coords(id, y);
        let q = self.atlas.q;
        for (a, ca) in c.iter().enumerate() {
            coords[q + a] += lambda * ca;
        }
        self.atlas.from_coords(id, &coords[..q], &coords[q..])
    }
}

impl MapEvaluator for LeafBumpShift {
    fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
        self.shifts
            .iter()
            .fold(x.clone(), |y, (id, c)| self.step(*id, c, &y))
    }

    fn exact_jacobian(&self, x: &AmbientPoint) -> Option<DMatrix<f64>> {
        let n = x.dim();
        let q = self.atlas.q;
        let mut y = x.clone();
        let mut jac = DMatrix::identity(n, n);
        for (id, c) in &self.shifts {
            let (lambda, grad) = self.atlas.chart_bump_with_grad(*id, &y);
            if lambda == 0.0 && grad.iter().all(|g| *g == 0.0) {
                continue;
            }
            let dtheta = self.atlas.coord_jacobian(*id, &y);
            let next = self.step(*id, c, &y);
            let dtheta_next = self.atlas.coord_jacobian(*id, &next);
            let mut inner = DMatrix::identity(n, n);
            for (a, ca) in c.iter().enumerate() {
                for (k, g) in grad.iter().enumerate() {
                    inner[(q + a, k)] += ca * g;
                }
            }
            let step = dtheta_next.try_inverse()? * inner * dtheta;
            jac = step * jac;
            y = next;
        }
        Some(jac)
    }
}

/// Built-in map families, as declared in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MapFamily {
    Identity,
    /// `x ↦ x + offset`.
    Translation { offset: Vec<f64> },
    /// `(t, v) ↦ (t, A v + offset(t) + leaf_terms(v))`; `A` defaults to the
    /// identity, the series to zero.
    LeafAffine {
        #[serde(default)]
        matrix: Option<Vec<Vec<i64>>>,
        #[serde(default)]
        offset: Vec<FourierSeries>,
        #[serde(default)]
        leaf_terms: Vec<FourierSeries>,
    },
    /// `v_a ↦ v_a + shift + amplitude · sin(2π v_a)` on every leaf axis.
    LeafSine {
        amplitude: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Applies `maps` in order: the first entry acts first.
    Compose { maps: Vec<MapFamily> },
}

impl MapFamily {
    pub fn leaf_affine(matrix: Vec<Vec<i64>>, offset: Vec<FourierSeries>, leaf_terms: Vec<FourierSeries>) -> Self {
        MapFamily::LeafAffine {
            matrix: Some(matrix),
            offset,
            leaf_terms,
        }
    }

    pub fn build(&self, atlas: &FoliatedAtlas) -> Result<Arc<dyn MapEvaluator>> {
        let (n, p, q) = (atlas.n, atlas.p, atlas.q);
        match self {
            MapFamily::Identity => Ok(Arc::new(IdentityMap)),
            MapFamily::Translation { offset } => {
                if offset.len() != n {
                    return Err(Error::Dimension(format!(
                        "translation offset has {} entries, torus dimension is {n}",
                        offset.len()
                    )));
                }
                Ok(Arc::new(TranslationMap {
                    offset: offset.clone(),
                }))
            }
            MapFamily::LeafAffine {
                matrix,
                offset,
                leaf_terms,
            } => {
                let FoliationModel::Linear {
                    transverse_axes,
                    leaf_axes,
                } = &atlas.model
                else {
                    return Err(Error::InvalidParameter(
                        "leaf-affine maps need a linear torus foliation".into(),
                    ));
                };
                let m = match matrix {
                    None => DMatrix::identity(p, p),
                    Some(rows) => {
                        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                            return Err(Error::Dimension(format!("matrix must be {p}×{p}")));
                        }
                        DMatrix::from_fn(p, p, |i, j| rows[i][j] as f64)
                    }
                };
                let pad = |v: &Vec<FourierSeries>, what: &str, vars: usize| -> Result<Vec<FourierSeries>> {
                    if v.is_empty() {
                        return Ok(vec![FourierSeries::zero(); p]);
                    }
                    if v.len() != p {
                        return Err(Error::Dimension(format!(
                            "{what} needs {p} series, got {}",
                            v.len()
                        )));
                    }
                    if v.iter().any(|s| s.max_freq_len() > vars) {
                        return Err(Error::Dimension(format!(
                            "{what} frequencies have more than {vars} entries"
                        )));
                    }
                    Ok(v.clone())
                };
                Ok(Arc::new(LeafAffineMap {
                    transverse_axes: transverse_axes.clone(),
                    leaf_axes: leaf_axes.clone(),
                    matrix: m,
                    offset: pad(offset, "offset", q)?,
                    leaf_terms: pad(leaf_terms, "leaf_terms", p)?,
                }))
            }
            MapFamily::LeafSine { amplitude, shift } => {
                let terms = (0..p)
                    .map(|a| {
                        let mut freq = vec![0; p];
                        freq[a] = 1;
                        FourierSeries::constant(*shift).with_sin(&freq, *amplitude)
                    })
                    .collect();
                MapFamily::LeafAffine {
                    matrix: None,
                    offset: Vec::new(),
                    leaf_terms: terms,
                }
                .build(atlas)
            }
            MapFamily::Compose { maps } => {
                let mut acc: Arc<dyn MapEvaluator> = Arc::new(IdentityMap);
                for (k, m) in maps.iter().enumerate() {
                    let next = m.build(atlas)?;
                    acc = if k == 0 {
                        next
                    } else {
                        Arc::new(CompositeMap {
                            first: acc,
                            second: next,
                        })
                    };
                }
                Ok(acc)
            }
        }
    }

    /// Whether every map of the family sends each leaf of `atlas` to itself.
    pub fn is_leaf_preserving(&self, atlas: &FoliatedAtlas) -> bool {
        match self {
            MapFamily::Identity => true,
            MapFamily::LeafAffine { .. } | MapFamily::LeafSine { .. } => {
                matches!(atlas.model, FoliationModel::Linear { .. })
            }
            MapFamily::Translation { offset } => match &atlas.model {
                FoliationModel::Linear {
                    transverse_axes, ..
                } => transverse_axes
                    .iter()
                    .all(|a| nearest_rep(offset[*a]).abs() <= TOL_PLAQUE),
                FoliationModel::Suspension { .. } => offset.iter().all(|o| nearest_rep(*o) == 0.0),
            },
            MapFamily::Compose { maps } => maps.iter().all(|m| m.is_leaf_preserving(atlas)),
        }
    }

    /// Coefficientwise `(1 - s) a + s b` for two members of the same family
    /// (with equal matrices), `None` otherwise.
    pub fn interpolate(a: &MapFamily, b: &MapFamily, s: f64) -> Option<MapFamily> {
        let mix = |x: f64, y: f64| (1.0 - s) * x + s * y;
        let series = |u: &[FourierSeries], v: &[FourierSeries]| -> Vec<FourierSeries> {
            let zero = FourierSeries::zero();
            (0..u.len().max(v.len()))
                .map(|k| FourierSeries::lerp(u.get(k).unwrap_or(&zero), v.get(k).unwrap_or(&zero), s))
                .collect()
        };
        let promote = |m: &MapFamily| match m {
            MapFamily::Identity => MapFamily::LeafAffine {
                matrix: None,
                offset: vec![],
                leaf_terms: vec![],
            },
            other => other.clone(),
        };
        match (a, b) {
            (MapFamily::Identity, MapFamily::Identity) => Some(MapFamily::Identity),
            (MapFamily::Translation { offset: u }, MapFamily::Translation { offset: v }) if u.len() == v.len() => {
                Some(MapFamily::Translation {
                    offset: u.iter().zip(v).map(|(x, y)| mix(*x, *y)).collect(),
                })
            }
            (MapFamily::LeafSine { amplitude: a1, shift: s1 }, MapFamily::LeafSine { amplitude: a2, shift: s2 }) => {
                Some(MapFamily::LeafSine {
                    amplitude: mix(*a1, *a2),
                    shift: mix(*s1, *s2),
                })
            }
            (MapFamily::Compose { maps: u }, MapFamily::Compose { maps: v }) if u.len() == v.len() => u
                .iter()
                .zip(v)
                .map(|(x, y)| MapFamily::interpolate(x, y, s))
                .collect::<Option<Vec<_>>>()
                .map(|maps| MapFamily::Compose { maps }),
            (MapFamily::Identity, MapFamily::LeafAffine { .. }) | (MapFamily::LeafAffine { .. }, MapFamily::Identity) => {
                MapFamily::interpolate(&promote(a), &promote(b), s)
            }
            (
                MapFamily::LeafAffine {
                    matrix: m1,
                    offset: o1,
                    leaf_terms: l1,
                },
                MapFamily::LeafAffine {
                    matrix: m2,
                    offset: o2,
                    leaf_terms: l2,
                },
            ) if m1 == m2 => Some(MapFamily::LeafAffine {
                matrix: m1.clone(),
                offset: series(o1, o2),
                leaf_terms: series(l1, l2),
            }),
            _ => None,
        }
    }

    /// Analytic inverse, for families that have one.
    pub fn analytic_inverse(&self) -> Option<MapFamily> {
        match self {
            MapFamily::Identity => Some(MapFamily::Identity),
            MapFamily::Translation { offset } => Some(MapFamily::Translation {
                offset: offset.iter().map(|o| -o).collect(),
            }),
            MapFamily::Compose { maps } => maps
                .iter()
                .rev()
                .map(|m| m.analytic_inverse())
                .collect::<Option<Vec<_>>>()
                .map(|maps| MapFamily::Compose { maps }),
            _ => None,
        }
    }
}

/// Chart-coordinate Jacobian of a map together with the charts used.
#[derive(Clone, Debug)]
pub struct ChartJacobian {
    pub matrix: DMatrix<f64>,
    pub source_chart: usize,
    pub target_chart: usize,
}

/// Pass/fail over a sample set, with the offending points.
#[derive(Clone, Debug, Serialize)]
pub struct SampleReport {
    pub samples: usize,
    pub violations: Vec<Vec<f64>>,
    pub ok: bool,
}

/// A foliation map between foliated tori.
#[derive(Clone)]
pub struct FoliationMapSpec {
    pub name: String,
    pub source: Arc<FoliatedAtlas>,
    pub target: Arc<FoliatedAtlas>,
    pub evaluator: Arc<dyn MapEvaluator>,
    pub leaf_preserving: bool,
    pub family: Option<MapFamily>,
}

impl fmt::Debug for FoliationMapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FoliationMapSpec")
            .field("name", &self.name)
            .field("leaf_preserving", &self.leaf_preserving)
            .field("family", &self.family)
            .finish()
    }
}

impl FoliationMapSpec {
    pub fn from_family(name: &str, atlas: &Arc<FoliatedAtlas>, family: MapFamily) -> Result<Self> {
        Ok(FoliationMapSpec {
            name: name.to_string(),
            source: atlas.clone(),
            target: atlas.clone(),
            evaluator: family.build(atlas)?,
            leaf_preserving: family.is_leaf_preserving(atlas),
            family: Some(family),
        })
    }

    pub fn identity(atlas: &Arc<FoliatedAtlas>) -> Self {
        Self::from_family("id", atlas, MapFamily::Identity).expect("identity builds on any atlas")
    }

    pub fn custom(
        name: &str,
        source: &Arc<FoliatedAtlas>,
        target: &Arc<FoliatedAtlas>,
        evaluator: Arc<dyn MapEvaluator>,
        leaf_preserving: bool,
    ) -> Self {
        FoliationMapSpec {
            name: name.to_string(),
            source: source.clone(),
            target: target.clone(),
            evaluator,
            leaf_preserving,
            family: None,
        }
    }

    /// The same map read through differently oriented atlases.
    pub fn with_atlases(&self, source: &Arc<FoliatedAtlas>, target: &Arc<FoliatedAtlas>) -> Self {
        FoliationMapSpec {
            source: source.clone(),
            target: target.clone(),
            ..self.clone()
        }
    }

    pub fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
        self.evaluator.eval(x)
    }

    pub fn has_exact_jacobian(&self, x: &AmbientPoint) -> bool {
        self.evaluator.exact_jacobian(x).is_some()
    }

    pub fn fd_jacobian(&self, x: &AmbientPoint) -> Result<DMatrix<f64>> {
        fd_jacobian(&|p: &AmbientPoint| self.evaluator.eval(p), x)
    }

    /// Jacobian in ambient coordinates: exact when available, otherwise
    /// Richardson-refined central differences.
    pub fn ambient_jacobian(&self, x: &AmbientPoint) -> Result<DMatrix<f64>> {
        match self.evaluator.exact_jacobian(x) {
            Some(j) => Ok(j),
            None => self.fd_jacobian(x),
        }
    }

    /// Jacobian in chart coordinates `(t, b)` of the best source chart at
    /// `x` and the best target chart at the image, rows and columns ordered
    /// transverse block first.
    pub fn full_jacobian(&self, x: &AmbientPoint) -> Result<ChartJacobian> {
        let y = self.eval(x);
        let sc = self.source.charts_containing(x)?[0];
        let tc = self.target.charts_containing(&y)?[0];
        let d = self.ambient_jacobian(x)?;
        let inv = self
            .source
            .coord_jacobian(sc, x)
            .try_inverse()
            .ok_or_else(|| Error::NotDifferentiable(x.coords().to_vec()))?;
        Ok(ChartJacobian {
            matrix: self.target.coord_jacobian(tc, &y) * d * inv,
            source_chart: sc,
            target_chart: tc,
        })
    }

    /// Leaf block of the tangent map in oriented leaf frames of the best
    /// source and target charts.
    pub fn leafwise_jacobian(&self, x: &AmbientPoint) -> Result<DMatrix<f64>> {
        let y = self.eval(x);
        let sc = self.source.charts_containing(x)?[0];
        let tc = self.target.charts_containing(&y)?[0];
        self.leafwise_jacobian_in(x, sc, tc)
    }

    pub fn leafwise_jacobian_in(&self, x: &AmbientPoint, sc: usize, tc: usize) -> Result<DMatrix<f64>> {
        let y = self.eval(x);
        let not_local = || Error::NotPlaqueLocal(x.coords().to_vec());
        let (t0, _) = self.target.to_coords(tc, &y).map_err(|_| not_local())?;
        let frame = self.source.leaf_frame(sc, x);
        for col in 0..self.source.p {
            for sign in [-1.0, 1.0] {
                let dir: Vec<f64> = frame.column(col).iter().map(|v| sign * FD_STEP * v).collect();
                let img = self.eval(&x.translated(&dir));
                let (t1, _) = self.target.to_coords(tc, &img).map_err(|_| not_local())?;
                if t0.iter().zip(&t1).any(|(a, b)| (a - b).abs() > TOL_STENCIL) {
                    return Err(not_local());
                }
            }
        }
        let d = self.ambient_jacobian(x)?;
        Ok(self.target.leaf_covector(tc, &y) * d * frame)
    }

    /// Checks the leaf-preservation claim on a sample grid with the model's
    /// exact leaf predicate.
    pub fn check_leaf_preserving(&self, per_axis: usize) -> SampleReport {
        let grid = sample_grid(self.source.n, per_axis);
        let violations: Vec<Vec<f64>> = grid
            .par_iter()
            .filter(|x| {
                let y = self.eval(x);
                match self.target.same_leaf(x, &y) {
                    Some(same) => !same,
                    None => self.target.transverse_gap(x, &y).map_or(true, |g| g > TOL_PLAQUE),
                }
            })
            .map(|x| x.coords().to_vec())
            .collect();
        SampleReport {
            samples: grid.len(),
            ok: violations.is_empty(),
            violations,
        }
    }

    /// `then ∘ self`.
    pub fn then(&self, then: &FoliationMapSpec) -> FoliationMapSpec {
        let family = match (&self.family, &then.family) {
            (Some(a), Some(b)) => Some(MapFamily::Compose {
                maps: vec![a.clone(), b.clone()],
            }),
            _ => None,
        };
        FoliationMapSpec {
            name: format!("{}∘{}", then.name, self.name),
            source: self.source.clone(),
            target: then.target.clone(),
            evaluator: Arc::new(CompositeMap {
                first: self.evaluator.clone(),
                second: then.evaluator.clone(),
            }),
            leaf_preserving: self.leaf_preserving && then.leaf_preserving,
            family,
        }
    }

    /// Inverse map: analytic for translations, Newton otherwise. Fails when
    /// the sampled round trip does not close.
    pub fn inverse(&self) -> Result<FoliationMapSpec> {
        if let Some(MapFamily::LeafAffine {
            matrix: Some(rows), ..
        }) = &self.family
        {
            let m = DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j] as f64);
            if (m.determinant().abs() - 1.0).abs() > 1e-9 {
                return Err(Error::NotInvertible(format!(
                    "integer matrix has determinant {}",
                    m.determinant()
                )));
            }
        }
        let inv = match self.family.as_ref().and_then(|f| f.analytic_inverse()) {
            Some(fam) => {
                let mut spec = FoliationMapSpec::from_family(&format!("{}⁻¹", self.name), &self.target, fam)?;
                spec.target = self.source.clone();
                spec
            }
            None => FoliationMapSpec {
                name: format!("{}⁻¹", self.name),
                source: self.target.clone(),
                target: self.source.clone(),
                evaluator: Arc::new(NewtonInverse {
                    map: self.evaluator.clone(),
                }),
                leaf_preserving: self.leaf_preserving,
                family: None,
            },
        };
        for y in sample_grid(self.target.n, 7) {
            let back = self.eval(&inv.eval(&y));
            if back.torus_distance(&y) > 1e-10 {
                return Err(Error::NotInvertible(format!(
                    "round trip misses {:?} by {:.3e}",
                    y.coords(),
                    back.torus_distance(&y)
                )));
            }
        }
        Ok(inv)
    }
}

/// Checks on samples that `φ` and `ψ` induce the same leaf-space map: the
/// images lie on one leaf (model-exact predicate) or, where no exact
/// predicate exists, in a common plaque.
pub fn check_leaf_space_compatible(phi: &FoliationMapSpec, psi: &FoliationMapSpec, per_axis: usize) -> SampleReport {
    let grid = sample_grid(phi.source.n, per_axis);
    let target = &phi.target;
    let violations: Vec<Vec<f64>> = grid
        .par_iter()
        .filter(|x| {
            let a = phi.eval(x);
            let b = psi.eval(x);
            match target.same_leaf(&a, &b) {
                Some(same) => !same,
                None => target.transverse_gap(&a, &b).map_or(true, |g| g > TOL_PLAQUE),
            }
        })
        .map(|x| x.coords().to_vec())
        .collect();
    SampleReport {
        samples: grid.len(),
        ok: violations.is_empty(),
        violations,
    }
}

/// Axis-aligned box of the ambient torus, `[lo, lo + width]` per axis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmbientBox {
    pub lo: Vec<f64>,
    pub width: Vec<f64>,
}

impl AmbientBox {
    /// `(per_axis + 1)^n` points including the faces.
    pub fn samples(&self, per_axis: usize) -> Vec<AmbientPoint> {
        let n = self.lo.len();
        let k = per_axis + 1;
        (0..k.pow(n as u32))
            .map(|mut idx| {
                let c: Vec<f64> = (0..n)
                    .map(|a| {
                        let j = idx % k;
                        idx /= k;
                        self.lo[a] + self.width[a] * j as f64 / per_axis as f64
                    })
                    .collect();
                AmbientPoint::new(c)
            })
            .collect()
    }
}

/// One member of the compact family `K`: the cell `K_i`, its support
/// `V_i ⊃ K_i`, the source chart containing `V_i`, and the target chart
/// holding the base image of `V_i`.
#[derive(Clone, Debug, Serialize)]
pub struct SpCell {
    pub k: AmbientBox,
    pub support: AmbientBox,
    pub source_chart: usize,
    pub target_chart: usize,
    /// Distance of the base image of `V_i` to the target chart boundary.
    pub clearance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpReport {
    pub contains: bool,
    pub cells: usize,
    /// Sample failures of inclusion, plaque equality and closeness.
    pub violations: [usize; 3],
    pub max_plaque_deviation: f64,
    pub max_deviation: [f64; 2],
    pub warnings: Vec<String>,
}

/// Strong-plaquewise neighborhood of a base map: cells `K_i` from a regular
/// grid with supports `V_i` enlarged by a quarter cell per side.
#[derive(Clone, Debug)]
pub struct SPNeighborhoodSpec {
    pub base: FoliationMapSpec,
    pub cells_per_axis: usize,
    pub cells: Vec<SpCell>,
    /// Smallest cell clearance.
    pub clearance: f64,
    pub epsilon: f64,
    pub order: u8,
    /// When false, plaque deviations up to `1e-6` are downgraded to warnings.
    pub strict: bool,
    pub samples_per_axis: usize,
}

const SP_REFINEMENTS: [usize; 5] = [4, 8, 16, 32, 64];
const SP_CELL_BUDGET: usize = 1 << 15;

impl SPNeighborhoodSpec {
    /// Coarsest grid in `4, 8, …, 64` cells per axis whose base images keep
    /// a clearance of `epsilon` from the target chart boundaries, so that
    /// `epsilon`-close maps also pass the inclusion condition. When no grid
    /// within the cell budget reaches it, the grid with the largest clearance.
    pub fn around(base: &FoliationMapSpec, epsilon: f64, order: u8) -> Result<Self> {
        let mut best: Option<Self> = None;
        let mut last = None;
        let dim = base.source.n as u32;
        for n in SP_REFINEMENTS {
            if best.is_some() && n.pow(dim) > SP_CELL_BUDGET {
                break;
            }
            match Self::with_cells(base, n, epsilon, order) {
                Ok(s) if s.clearance >= epsilon => return Ok(s),
                Ok(s) => {
                    if best.as_ref().map_or(true, |b| s.clearance > b.clearance) {
                        best = Some(s);
                    }
                }
                Err(e) => last = Some(e),
            }
        }
        best.ok_or_else(|| last.expect("at least one refinement tried"))
    }

    pub fn with_cells(base: &FoliationMapSpec, per_axis: usize, epsilon: f64, order: u8) -> Result<Self> {
        if order > 1 {
            return Err(Error::InvalidParameter(format!("order {order} not supported (0 or 1)")));
        }
        let n = base.source.n;
        let samples_per_axis = if n >= 3 { 2 } else { 4 };
        let w = 1.0 / per_axis as f64;
        let cells: Result<Vec<SpCell>> = (0..per_axis.pow(n as u32))
            .into_par_iter()
            .map(|mut idx| {
                let lo: Vec<f64> = (0..n)
                    .map(|_| {
                        let j = idx % per_axis;
                        idx /= per_axis;
                        j as f64 * w
                    })
                    .collect();
                let k = AmbientBox {
                    lo: lo.clone(),
                    width: vec![w; n],
                };
                let support = AmbientBox {
                    lo: lo.iter().map(|l| l - 0.25 * w).collect(),
                    width: vec![1.5 * w; n],
                };
                let pts = support.samples(samples_per_axis);
                let source_chart = base
                    .source
                    .charts_containing(&pts[0])?
                    .into_iter()
                    .find(|id| pts.iter().all(|p| base.source.contains(*id, p)))
                    .ok_or_else(|| Error::NotPlaquewiseClose(format!("support at {lo:?} exceeds every source chart")))?;
                let imgs: Vec<AmbientPoint> = pts.iter().map(|p| base.eval(p)).collect();
                let candidates = base.target.charts_containing(&imgs[0]).unwrap_or_default();
                let (target_chart, clearance) = candidates
                    .into_iter()
                    .filter_map(|id| {
                        let m = imgs
                            .iter()
                            .map(|y| base.target.boundary_distance(id, y))
                            .fold(f64::INFINITY, f64::min);
                        (m > 0.0).then_some((id, m))
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .ok_or_else(|| Error::NotPlaquewiseClose(format!("image of support at {lo:?} exceeds every target chart")))?;
                Ok(SpCell {
                    k,
                    support,
                    source_chart,
                    target_chart,
                    clearance,
                })
            })
            .collect();
        let cells = cells?;
        let clearance = cells.iter().map(|c| c.clearance).fold(f64::INFINITY, f64::min);
        Ok(SPNeighborhoodSpec {
            base: base.clone(),
            cells_per_axis: per_axis,
            cells,
            clearance,
            epsilon,
            order,
            strict: true,
            samples_per_axis,
        })
    }

    pub fn non_strict(mut self) -> Self {
        self.strict = false;
        self
    }

    /// Bump `λ_i`: `1` on `K_i`, `0` outside `V_i`, smoothstep in between.
    pub fn bump(&self, i: usize, x: &AmbientPoint) -> f64 {
        let cell = &self.cells[i].k;
        let mut v = 1.0;
        for (a, c) in x.coords().iter().enumerate() {
            let w = cell.width[a];
            let center = cell.lo[a] + 0.5 * w;
            let d = nearest_rep(c - center).abs();
            if d > 0.5 * w {
                v *= smoothstep((0.75 * w - d) / (0.25 * w));
            }
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// Indices of the cells whose support contains `x`, in increasing order.
    pub fn relevant_cells(&self, x: &AmbientPoint) -> Vec<usize> {
        let m = self.cells_per_axis;
        let w = 1.0 / m as f64;
        let per_axis: Vec<Vec<usize>> = x
            .coords()
            .iter()
            .map(|c| {
                let j = ((c / w).floor() as usize).min(m - 1);
                let mut out = vec![j];
                let frac = c / w - j as f64;
                if frac < 0.25 {
                    out.push((j + m - 1) % m);
                }
                if frac > 0.75 {
                    out.push((j + 1) % m);
                }
                out
            })
            .collect();
        let mut ids = vec![0usize];
        let mut stride = 1;
        for opts in &per_axis {
            ids = ids
                .iter()
                .flat_map(|base| opts.iter().map(move |o| base + o * stride))
                .collect();
            stride *= m;
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Verifies the three neighborhood conditions for `psi` on sample grids:
    /// inclusion and plaque equality on each support `V_i`, closeness of
    /// chart values (and first derivatives when `order = 1`) on each `K_i`.
    pub fn contains(&self, psi: &FoliationMapSpec) -> SpReport {
        let target = &self.base.target;
        let q = target.q;
        let per_cell: Vec<([usize; 3], f64, [f64; 2])> = self
            .cells
            .par_iter()
            .map(|cell| {
                let mut viol = [0usize; 3];
                let mut plaque: f64 = 0.0;
                let mut dev = [0.0f64; 2];
                let tc = cell.target_chart;
                for x in cell.support.samples(self.samples_per_axis) {
                    let a = self.base.eval(&x);
                    let b = psi.eval(&x);
                    if !target.contains(tc, &b) {
                        viol[0] += 1;
                        continue;
                    }
                    let ca = target.raw_coords(tc, &a);
                    let cb = target.raw_coords(tc, &b);
                    let gap = (0..q).map(|k| (ca[k] - cb[k]).abs()).fold(0.0, f64::max);
                    plaque = plaque.max(gap);
                }
                for x in cell.k.samples(self.samples_per_axis) {
                    let a = self.base.eval(&x);
                    let b = psi.eval(&x);
                    let ca = target.raw_coords(tc, &a);
                    let cb = target.raw_coords(tc, &b);
                    let d0 = ca.iter().zip(&cb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                    dev[0] = dev[0].max(d0);
                    if self.order >= 1 {
                        let ja = self.base.ambient_jacobian(&x).map(|j| target.coord_jacobian(tc, &a) * j);
                        let jb = psi.ambient_jacobian(&x).map(|j| target.coord_jacobian(tc, &b) * j);
                        match (ja, jb) {
                            (Ok(ja), Ok(jb)) => dev[1] = dev[1].max((ja - jb).amax()),
                            _ => dev[1] = f64::INFINITY,
                        }
                    }
                }
                if dev[0] >= self.epsilon || dev[1] >= self.epsilon {
                    viol[2] += 1;
                }
                (viol, plaque, dev)
            })
            .collect();
        let mut violations = [0usize; 3];
        let mut max_plaque: f64 = 0.0;
        let mut max_dev = [0.0f64; 2];
        for (v, p, d) in &per_cell {
            for k in 0..3 {
                violations[k] += v[k];
            }
            max_plaque = max_plaque.max(*p);
            max_dev[0] = max_dev[0].max(d[0]);
            max_dev[1] = max_dev[1].max(d[1]);
        }
        let mut warnings = Vec::new();
        let plaque_limit = if self.strict { TOL_PLAQUE } else { 1e-6 };
        if max_plaque > plaque_limit {
            violations[1] += 1;
        } else if max_plaque > TOL_PLAQUE {
            warnings.push(format!("plaque deviation {max_plaque:.3e} above {TOL_PLAQUE:e}"));
        }
        SpReport {
            contains: violations.iter().all(|v| *v == 0),
            cells: self.cells.len(),
            violations,
            max_plaque_deviation: max_plaque,
            max_deviation: max_dev,
            warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_linear_torus_foliation;
    use proptest::prelude::*;
    use std::f64::consts::TAU;
    use std::sync::OnceLock;

    fn t2() -> Arc<FoliatedAtlas> {
        static A: OnceLock<Arc<FoliatedAtlas>> = OnceLock::new();
        A.get_or_init(|| Arc::new(make_linear_torus_foliation(2, &[1]).unwrap())).clone()
    }

    fn t3() -> Arc<FoliatedAtlas> {
        static A: OnceLock<Arc<FoliatedAtlas>> = OnceLock::new();
        A.get_or_init(|| Arc::new(make_linear_torus_foliation(3, &[1, 2]).unwrap())).clone()
    }

    fn sine(atlas: &Arc<FoliatedAtlas>, eps: f64) -> FoliationMapSpec {
        FoliationMapSpec::from_family("phi", atlas, MapFamily::LeafSine { amplitude: eps, shift: 0.0 }).unwrap()
    }

    fn hyperbolic(atlas: &Arc<FoliatedAtlas>, c: FourierSeries) -> FoliationMapSpec {
        FoliationMapSpec::from_family(
            "phi",
            atlas,
            MapFamily::leaf_affine(vec![vec![2, 1], vec![1, 1]], vec![c, FourierSeries::zero()], vec![]),
        )
        .unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let a = t2();
        let id = FoliationMapSpec::identity(&a);
        assert_eq!(id.eval(&AmbientPoint::new(vec![0.3, 0.7])).coords(), &[0.3, 0.7]);
        let shift = FoliationMapSpec::from_family("s", &a, MapFamily::Translation { offset: vec![0.0, 0.25] }).unwrap();
        let y = shift.eval(&AmbientPoint::new(vec![0.1, 0.9]));
        assert!((y.coords()[0] - 0.1).abs() < 1e-15 && (y.coords()[1] - 0.15).abs() < 1e-12);
        let h = hyperbolic(&t3(), FourierSeries::zero());
        let y = h.eval(&AmbientPoint::new(vec![0.0, 0.5, 0.5]));
        assert_eq!(y.coords(), &[0.0, 0.5, 0.0]);
    }

    #[test]
    fn jacobian_examples() {
        let a = t2();
        let id = FoliationMapSpec::identity(&a);
        let x = AmbientPoint::new(vec![0.4, 0.6]);
        assert_eq!(id.full_jacobian(&x).unwrap().matrix, DMatrix::identity(2, 2));
        assert_eq!(id.leafwise_jacobian(&x).unwrap(), DMatrix::identity(1, 1));
        let h = hyperbolic(&t3(), FourierSeries::zero().with_sin(&[1], 0.1));
        for x in sample_grid(3, 3) {
            let l = h.leafwise_jacobian(&x).unwrap();
            assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
        }
        let s = sine(&a, 0.05);
        let l = s.leafwise_jacobian(&AmbientPoint::new(vec![0.3, 0.0])).unwrap();
        assert!((l[(0, 0)] - (1.0 + TAU * 0.05)).abs() < 1e-12);
        assert!((l[(0, 0)] - 1.3141592653589793).abs() < 1e-12);
    }

    #[test]
    fn fd_agrees_with_exact_on_sine() {
        let s = sine(&t2(), 0.05);
        for x in sample_grid(2, 9) {
            let e = s.ambient_jacobian(&x).unwrap();
            let f = s.fd_jacobian(&x).unwrap();
            assert!((e - f).amax() < 1e-7);
        }
    }

    #[test]
    fn non_differentiable_detected() {
        #[derive(Debug)]
        struct Kink;
        impl MapEvaluator for Kink {
            fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
                let c = x.coords();
                AmbientPoint::new(vec![c[0], c[1] + 0.1 * (c[1] - 0.5).cbrt()])
            }
        }
        let a = t2();
        let m = FoliationMapSpec::custom("kink", &a, &a, Arc::new(Kink), true);
        let err = m.full_jacobian(&AmbientPoint::new(vec![0.2, 0.5])).unwrap_err();
        assert!(err.to_string().contains("not differentiable"));
    }

    #[test]
    fn plaque_locality_enforced() {
        #[derive(Debug)]
        struct Shear;
        impl MapEvaluator for Shear {
            fn eval(&self, x: &AmbientPoint) -> AmbientPoint {
                let c = x.coords();
                AmbientPoint::new(vec![c[0] + 0.1 * c[1], c[1]])
            }
        }
        let a = t2();
        let m = FoliationMapSpec::custom("shear", &a, &a, Arc::new(Shear), false);
        let err = m.leafwise_jacobian(&AmbientPoint::new(vec![0.2, 0.5])).unwrap_err();
        assert!(err.to_string().contains("not plaque-local"));
    }

    #[test]
    fn compatibility_examples() {
        let a = t2();
        let s = sine(&a, 0.05);
        assert!(check_leaf_space_compatible(&s, &s, 8).ok);
        let up = FoliationMapSpec::from_family("a", &a, MapFamily::Translation { offset: vec![0.0, 0.1] }).unwrap();
        let up2 = FoliationMapSpec::from_family("b", &a, MapFamily::Translation { offset: vec![0.0, 0.7] }).unwrap();
        assert!(check_leaf_space_compatible(&up, &up2, 8).ok);
        let side = FoliationMapSpec::from_family("c", &a, MapFamily::Translation { offset: vec![0.1, 0.0] }).unwrap();
        let rep = check_leaf_space_compatible(&side, &FoliationMapSpec::identity(&a), 8);
        assert!(!rep.ok && !rep.violations.is_empty());
        assert!(!side.leaf_preserving && up.leaf_preserving && s.leaf_preserving);
        assert!(s.check_leaf_preserving(8).ok);
        assert!(!side.check_leaf_preserving(8).ok);
    }

    #[test]
    fn sp_examples() {
        let a = t2();
        let id = FoliationMapSpec::identity(&a);
        let nb = SPNeighborhoodSpec::around(&id, 0.05, 0).unwrap();
        assert!(nb.contains(&id).contains);
        let small = FoliationMapSpec::from_family("d", &a, MapFamily::Translation { offset: vec![0.0, 0.01] }).unwrap();
        let rep = nb.contains(&small);
        assert!(rep.contains, "{rep:?}");
        assert!((rep.max_deviation[0] - 0.01).abs() < 1e-12);
        let side = FoliationMapSpec::from_family("c", &a, MapFamily::Translation { offset: vec![0.3, 0.0] }).unwrap();
        let rep = nb.contains(&side);
        assert!(!rep.contains);
        assert!(rep.violations[0] + rep.violations[1] > 0);
    }

    #[test]
    fn sp_first_order() {
        let a = t2();
        let id = FoliationMapSpec::identity(&a);
        let nb = SPNeighborhoodSpec::around(&id, 0.05, 1).unwrap();
        assert!(nb.contains(&sine(&a, 0.005)).contains);
        assert!(!nb.contains(&sine(&a, 0.05)).contains, "derivative deviation 2π·0.05 exceeds ε");
    }

    #[test]
    fn bumps_cover() {
        let a = t2();
        let nb = SPNeighborhoodSpec::with_cells(&FoliationMapSpec::identity(&a), 16, 0.1, 0).unwrap();
        for x in sample_grid(2, 37) {
            let rel = nb.relevant_cells(&x);
            assert!(rel.iter().any(|i| nb.bump(*i, &x) == 1.0));
            for i in 0..nb.cells.len() {
                if nb.bump(i, &x) > 0.0 {
                    assert!(rel.contains(&i));
                }
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let a = t2();
        let shift = FoliationMapSpec::from_family("s", &a, MapFamily::Translation { offset: vec![0.0, 0.2] }).unwrap();
        let inv = shift.inverse().unwrap();
        assert!(inv.family.is_some());
        let s = sine(&a, 0.05);
        let si = s.inverse().unwrap();
        let x = AmbientPoint::new(vec![0.3, 0.77]);
        assert!(s.eval(&si.eval(&x)).torus_distance(&x) < 1e-13);
        let h = hyperbolic(&t3(), FourierSeries::zero().with_cos(&[1], 0.1));
        let hi = h.inverse().unwrap();
        let x = AmbientPoint::new(vec![0.3, 0.77, 0.1]);
        assert!(h.eval(&hi.eval(&x)).torus_distance(&x) < 1e-12);
        let doubling = FoliationMapSpec::from_family("d", &a, MapFamily::leaf_affine(vec![vec![2]], vec![], vec![])).unwrap();
        assert!(doubling.inverse().is_err());
    }

    #[test]
    fn bump_shift_jacobian() {
        let a = t2();
        let m = LeafBumpShift {
            atlas: a.clone(),
            shifts: vec![(0, vec![0.01]), (4, vec![-0.007]), (5, vec![0.004])],
        };
        for x in sample_grid(2, 13) {
            let e = m.exact_jacobian(&x).unwrap();
            let f = fd_jacobian(&|p: &AmbientPoint| m.eval(p), &x).unwrap();
            assert!((e - f).amax() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn chain_rule(x0 in 0.0..1.0f64, x1 in 0.0..1.0f64, x2 in 0.0..1.0f64) {
            let a = t3();
            let phi = hyperbolic(&a, FourierSeries::zero().with_sin(&[1], 0.1));
            let psi = FoliationMapSpec::from_family("psi", &a, MapFamily::leaf_affine(
                vec![vec![1, 1], vec![0, 1]], vec![], vec![FourierSeries::zero().with_sin(&[0, 1], 0.03), FourierSeries::zero()])).unwrap();
            let x = AmbientPoint::new(vec![x0, x1, x2]);
            let comp = phi.then(&psi);
            let lhs = comp.fd_jacobian(&x).unwrap();
            let rhs = psi.ambient_jacobian(&phi.eval(&x)).unwrap() * phi.ambient_jacobian(&x).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-6);
        }

        #[test]
        fn leaf_preserving_block_vanishes(x0 in 0.0..1.0f64, x1 in 0.0..1.0f64, x2 in 0.0..1.0f64) {
            let a = t3();
            let phi = hyperbolic(&a, FourierSeries::zero().with_sin(&[1], 0.1));
            let j = phi.full_jacobian(&AmbientPoint::new(vec![x0, x1, x2])).unwrap().matrix;
            for col in 1..3 {
                prop_assert!(j[(0, col)].abs() < 1e-8);
            }
        }

        #[test]
        fn leafwise_det_sign_chart_independent(x0 in 0.0..1.0f64, x1 in 0.0..1.0f64) {
            let a = t2();
            let s = sine(&a, 0.05);
            let x = AmbientPoint::new(vec![x0, x1]);
            let y = s.eval(&x);
            let mut signs = Vec::new();
            for sc in a.charts_containing(&x).unwrap() {
                for tc in a.charts_containing(&y).unwrap() {
                    signs.push(s.leafwise_jacobian_in(&x, sc, tc).unwrap().determinant().signum());
                }
            }
            prop_assert!(signs.windows(2).all(|w| w[0] == w[1]));
        }
    }
}
