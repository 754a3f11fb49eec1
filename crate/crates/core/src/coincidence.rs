//! Coincidence sets as zero sets of the leafwise defect.
//!
//! For foliation maps `φ, ψ` with images in a common plaque, the defect is
//! `F(x) = b(φ(x)) - b(ψ(x))`, the difference of leaf coordinates in a chart
//! holding both images. Its zero set is `Coin(φ, ψ)`. A zero is leafwise
//! simple when `DF` restricted to the leaf is invertible and ls-transverse
//! when `DF` is onto. In codimension one the zero set is a union of closed
//! curves, located from a grid of seeds and traced by continuation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cofactor_null_vector, min_norm_solve, singular_values};
use crate::maps::{check_leaf_space_compatible, FoliationMapSpec};
use crate::torus::{point_segment_distance, sample_grid, AmbientPoint};

pub const TOL_ZERO: f64 = 1e-10;
pub const TOL_RANK: f64 = 1e-6;
pub const DEDUP_RADIUS: f64 = 1e-3;
pub const DEFAULT_STEP: f64 = 1e-3;
pub const FOLD_RESOLUTION: f64 = 1e-6;
pub const MIN_STEP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub grid_per_axis: usize,
    pub step: f64,
    pub tol_zero: f64,
    pub tol_rank: f64,
    pub dedup_radius: f64,
    /// Longest segment across which the leafwise sign may flip.
    pub fold_resolution: f64,
    pub min_step: f64,
    pub max_steps: usize,
    pub newton_max_iter: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            grid_per_axis: 64,
            step: DEFAULT_STEP,
            tol_zero: TOL_ZERO,
            tol_rank: TOL_RANK,
            dedup_radius: DEDUP_RADIUS,
            fold_resolution: FOLD_RESOLUTION,
            min_step: MIN_STEP,
            max_steps: 2_000_000,
            newton_max_iter: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    LeafwiseSimple,
    LsTransverseOnly,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointClassification {
    pub kind: PointKind,
    pub leaf_rank: usize,
    pub full_rank: usize,
    /// Smallest singular values of the leaf block and of the full `DF`.
    pub sigma_leaf: f64,
    pub sigma_full: f64,
    /// Determinant of the leaf block in oriented frames.
    pub leaf_det: f64,
    /// `ε` at leafwise-simple points.
    pub sign: Option<i8>,
}

/// Defect of the pair `(φ, ψ)`.
#[derive(Clone, Debug)]
pub struct DefectEvaluator {
    pub phi: FoliationMapSpec,
    pub psi: FoliationMapSpec,
}

/// `F`, `DF` and the chart that computed them.
#[derive(Clone, Debug)]
pub struct DefectSample {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub chart: usize,
}

impl DefectEvaluator {
    /// Fails when `φ` and `ψ` do not induce the same leaf-space map.
    pub fn new(phi: &FoliationMapSpec, psi: &FoliationMapSpec) -> Result<Self> {
        if !phi.target.same_foliation(&psi.target) || !phi.source.same_foliation(&psi.source) {
            return Err(Error::Incompatible { violations: 1 });
        }
        let rep = check_leaf_space_compatible(phi, psi, 16);
        if !rep.ok {
            return Err(Error::Incompatible {
                violations: rep.violations.len(),
            });
        }
        Ok(DefectEvaluator {
            phi: phi.clone(),
            psi: psi.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.phi.source.n
    }

    pub fn p(&self) -> usize {
        self.phi.target.p
    }

    pub fn q(&self) -> usize {
        self.phi.target.q
    }

    fn images(&self, x: &AmbientPoint) -> Result<(AmbientPoint, AmbientPoint, usize)> {
        let a = self.phi.eval(x);
        let b = self.psi.eval(x);
        let chart = self
            .phi
            .target
            .in_good_saturation(&a, &b)
            .ok_or_else(|| Error::OutsideSaturation(x.coords().to_vec()))?;
        Ok((a, b, chart))
    }

    pub fn eval(&self, x: &AmbientPoint) -> Result<DVector<f64>> {
        let (a, b, chart) = self.images(x)?;
        Ok(self.value_in(chart, &a, &b))
    }

    fn value_in(&self, chart: usize, a: &AmbientPoint, b: &AmbientPoint) -> DVector<f64> {
        let q = self.q();
        let ca = self.phi.target.raw_coords(chart, a);
        let cb = self.phi.target.raw_coords(chart, b);
        DVector::from_iterator(self.p(), (q..q + self.p()).map(|k| ca[k] - cb[k]))
    }

    pub fn sample(&self, x: &AmbientPoint) -> Result<DefectSample> {
        let (a, b, chart) = self.images(x)?;
        let target = &self.phi.target;
        let q = self.q();
        let p = self.p();
        let ja = target.coord_jacobian(chart, &a).rows(q, p).into_owned() * self.phi.ambient_jacobian(x)?;
        let jb = target.coord_jacobian(chart, &b).rows(q, p).into_owned() * self.psi.ambient_jacobian(x)?;
        Ok(DefectSample {
            value: self.value_in(chart, &a, &b),
            jacobian: ja - jb,
            chart,
        })
    }

    /// `φ_* - ψ_*` on the leaf through `x`, in the oriented leaf frame of the
    /// best source chart at `x` and the oriented coordinates of `chart`.
    pub fn leaf_block(&self, x: &AmbientPoint, sample: &DefectSample) -> Result<DMatrix<f64>> {
        let source = &self.phi.source;
        let sc = source.charts_containing(x)?[0];
        let orient = f64::from(self.phi.target.charts[sample.chart].leaf_orientation);
        Ok(&sample.jacobian * source.leaf_frame(sc, x) * orient)
    }

    pub fn classify(&self, x: &AmbientPoint, tol_rank: f64) -> Result<PointClassification> {
        let s = self.sample(x)?;
        self.classify_sample(x, &s, tol_rank)
    }

    fn classify_sample(&self, x: &AmbientPoint, s: &DefectSample, tol_rank: f64) -> Result<PointClassification> {
        let leaf = self.leaf_block(x, s)?;
        let sv_leaf = singular_values(&leaf);
        let sv_full = singular_values(&s.jacobian);
        let sigma_leaf = sv_leaf.last().copied().unwrap_or(0.0);
        let sigma_full = sv_full.last().copied().unwrap_or(0.0);
        let leaf_rank = sv_leaf.iter().filter(|v| **v > tol_rank).count();
        let full_rank = sv_full.iter().filter(|v| **v > tol_rank).count();
        let p = self.p();
        let kind = if leaf_rank == p {
            PointKind::LeafwiseSimple
        } else if full_rank == p {
            PointKind::LsTransverseOnly
        } else {
            PointKind::Degenerate
        };
        let leaf_det = leaf.determinant();
        Ok(PointClassification {
            kind,
            leaf_rank,
            full_rank,
            sigma_leaf,
            sigma_full,
            leaf_det,
            sign: (kind == PointKind::LeafwiseSimple).then(|| if leaf_det > 0.0 { 1 } else { -1 }),
        })
    }

    /// Gauss–Newton with the minimum-norm step, iterated until the residual
    /// stops decreasing so that double roots are resolved to machine level.
    /// Returns the best iterate and its residual.
    pub fn refine(&self, x0: &AmbientPoint, max_iter: usize) -> Option<(AmbientPoint, f64)> {
        let mut x = x0.clone();
        let mut best: Option<(AmbientPoint, f64)> = None;
        let mut stalls = 0;
        for _ in 0..max_iter {
            let s = self.sample(&x).ok()?;
            let r = s.value.norm();
            match &best {
                Some((_, b)) if r >= 0.999 * b => stalls += 1,
                _ => stalls = 0,
            }
            if best.as_ref().map_or(true, |(_, b)| r < *b) {
                best = Some((x.clone(), r));
            }
            if r == 0.0 || stalls >= 3 {
                break;
            }
            let mut dx = min_norm_solve(&s.jacobian, &(-&s.value))?;
            let len = dx.norm();
            if !len.is_finite() {
                break;
            }
            if len > 0.1 {
                dx *= 0.1 / len;
            }
            x = x.translated(dx.as_slice());
            if len < 1e-16 {
                stalls += 1;
            }
        }
        best
    }

    /// Newton projection of a predictor back onto `F = 0`.
    fn correct(&self, pred: &AmbientPoint, tol_zero: f64) -> Option<AmbientPoint> {
        let mut x = pred.clone();
        for _ in 0..12 {
            let s = self.sample(&x).ok()?;
            let r = s.value.norm();
            let dx = min_norm_solve(&s.jacobian, &(-&s.value))?;
            if r < tol_zero && dx.norm() < 1e-13 {
                return Some(x);
            }
            x = x.translated(dx.as_slice());
        }
        let r = self.eval(&x).ok()?.norm();
        (r < tol_zero).then_some(x)
    }
}

/// Classification of a coincidence point.
pub fn classify_point(defect: &DefectEvaluator, x: &AmbientPoint, tol_rank: f64) -> Result<PointClassification> {
    defect.classify(x, tol_rank)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoincidenceComponent {
    pub id: usize,
    pub points: Vec<AmbientPoint>,
    pub classifications: Vec<PointClassification>,
    pub charts: Vec<usize>,
    pub closed: bool,
    /// Set when the component contains degenerate points or could not be
    /// traced.
    pub degenerate: bool,
    /// Common `ε` of all points, when every point is leafwise simple with
    /// the same sign.
    pub sign: Option<i8>,
    pub sign_changes: usize,
    /// Sign changes across segments longer than the fold resolution.
    pub unresolved_sign_changes: usize,
    pub arclength: f64,
}

impl CoincidenceComponent {
    fn finish(mut self, fold_resolution: f64) -> Self {
        let m = self.points.len();
        let pairs = if self.closed { m } else { m.saturating_sub(1) };
        let mut changes = 0;
        let mut unresolved = 0;
        for k in 0..pairs {
            let (i, j) = (k, (k + 1) % m);
            let (a, b) = (&self.classifications[i], &self.classifications[j]);
            if a.leaf_det.signum() != b.leaf_det.signum() {
                changes += 1;
                if self.points[i].torus_distance(&self.points[j]) > fold_resolution * (1.0 + 1e-9) {
                    unresolved += 1;
                }
            }
        }
        self.sign_changes = changes;
        self.unresolved_sign_changes = unresolved;
        let first = self.classifications.first().and_then(|c| c.sign);
        self.sign = if !self.degenerate && self.classifications.iter().all(|c| c.sign.is_some() && c.sign == first) {
            first
        } else {
            None
        };
        self
    }

    pub fn is_leafwise_simple(&self) -> bool {
        !self.degenerate && self.classifications.iter().all(|c| c.kind == PointKind::LeafwiseSimple)
    }

    pub fn is_ls_transverse(&self) -> bool {
        !self.degenerate && self.classifications.iter().all(|c| c.kind != PointKind::Degenerate)
    }

    /// Smallest distance from `x` to the polyline.
    pub fn distance_to(&self, x: &AmbientPoint) -> f64 {
        let m = self.points.len();
        if m == 1 {
            return self.points[0].torus_distance(x);
        }
        let pairs = if self.closed { m } else { m - 1 };
        (0..pairs)
            .map(|k| point_segment_distance(x, &self.points[k], &self.points[(k + 1) % m]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn hausdorff(&self, other: &CoincidenceComponent) -> f64 {
        let one = self.points.iter().map(|p| other.distance_to(p)).fold(0.0, f64::max);
        let two = other.points.iter().map(|p| self.distance_to(p)).fold(0.0, f64::max);
        one.max(two)
    }
}

fn oriented(v: DVector<f64>, reference: Option<&DVector<f64>>, transverse: &DMatrix<f64>) -> DVector<f64> {
    let v = v.normalize();
    let flip = match reference {
        Some(r) => v.dot(r) < 0.0,
        None => (transverse * &v)[0] < 0.0,
    };
    if flip {
        -v
    } else {
        v
    }
}

/// Traces the closed zero curve through `seed` by predictor–corrector
/// continuation along the kernel of `DF`.
///
/// Steps are halved when the corrector fails, when `DF` is poorly
/// conditioned, and when the leafwise sign would flip across a segment
/// longer than the fold resolution.
pub fn trace_component(defect: &DefectEvaluator, seed: &AmbientPoint, opts: &SearchOptions) -> Result<CoincidenceComponent> {
    if defect.q() != 1 {
        return Err(Error::UnsupportedCodimension(defect.q()));
    }
    let source = &defect.phi.source;
    let stalled = |x: &AmbientPoint| Error::TraceStalled(x.coords().to_vec());
    let s0 = defect.sample(seed)?;
    let c0 = defect.classify_sample(seed, &s0, opts.tol_rank)?;
    if c0.kind == PointKind::Degenerate || s0.value.norm() >= opts.tol_zero {
        return Err(stalled(seed));
    }
    let transverse_at = |x: &AmbientPoint| -> Result<DMatrix<f64>> {
        let id = source.charts_containing(x)?[0];
        Ok(source.transverse_covector(id, x))
    };
    let mut v = oriented(cofactor_null_vector(&s0.jacobian), None, &transverse_at(seed)?);
    let mut points = vec![seed.clone()];
    let mut classes = vec![c0];
    let mut charts = vec![s0.chart];
    let mut h = opts.step;
    let mut arclength = 0.0;
    let mut left_start = false;
    let mut closed = false;
    let mut steps = 0usize;
    while !closed {
        if steps >= opts.max_steps {
            return Err(Error::TraceNotClosed(arclength));
        }
        steps += 1;
        let x = points.last().expect("nonempty").clone();
        let step_vec: Vec<f64> = v.iter().map(|c| c * h).collect();
        let pred = x.translated(&step_vec);
        let accepted = defect.correct(&pred, opts.tol_zero).and_then(|xc| {
            let moved = pred.torus_distance(&xc);
            let seg = x.torus_distance(&xc);
            if moved >= 0.5 * h || seg == 0.0 {
                return None;
            }
            let s = defect.sample(&xc).ok()?;
            let c = defect.classify_sample(&xc, &s, opts.tol_rank).ok()?;
            if c.sigma_full < 10.0 * opts.tol_rank {
                return None;
            }
            let prev = classes.last().expect("nonempty");
            if prev.leaf_det.signum() != c.leaf_det.signum() && seg > opts.fold_resolution {
                return None;
            }
            Some((xc, s, c, seg))
        });
        let Some((xc, s, c, seg)) = accepted else {
            h *= 0.5;
            if h < opts.min_step {
                return Err(stalled(&x));
            }
            continue;
        };
        if left_start && points.len() > 3 && point_segment_distance(seed, &x, &xc) < 0.5 * opts.step {
            closed = true;
            arclength += x.torus_distance(seed);
            continue;
        }
        arclength += seg;
        left_start |= xc.torus_distance(seed) > opts.step;
        v = oriented(cofactor_null_vector(&s.jacobian), Some(&v), &transverse_at(&xc)?);
        points.push(xc);
        classes.push(c);
        charts.push(s.chart);
        h = (2.0 * h).min(opts.step);
    }
    let kind_degenerate = classes.iter().any(|c| c.kind == PointKind::Degenerate);
    Ok(CoincidenceComponent {
        id: 0,
        points,
        classifications: classes,
        charts,
        closed,
        degenerate: kind_degenerate,
        sign: None,
        sign_changes: 0,
        unresolved_sign_changes: 0,
        arclength,
    }
    .finish(opts.fold_resolution))
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentSearch {
    pub components: Vec<CoincidenceComponent>,
    pub warnings: Vec<String>,
    pub grid_per_axis: usize,
    pub seeds: usize,
    pub converged: usize,
    pub lipschitz: f64,
    pub threshold: f64,
}

impl ComponentSearch {
    /// Every component traced, closed and free of degenerate points.
    pub fn is_ls_transverse(&self) -> bool {
        self.components.iter().all(|c| c.is_ls_transverse() && c.closed)
    }

    /// Every point of every component leafwise simple.
    pub fn is_leafwise_simple(&self) -> bool {
        self.components.iter().all(|c| c.is_leafwise_simple() && c.closed)
    }
}

fn grid_neighbors(idx: usize, n: usize, m: usize) -> Vec<usize> {
    let mut digits = Vec::with_capacity(n);
    let mut rest = idx;
    for _ in 0..n {
        digits.push(rest % m);
        rest /= m;
    }
    let mut out = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut id = 0;
        let mut stride = 1;
        let mut is_self = true;
        for d in &digits {
            let off = c % 3;
            c /= 3;
            if off != 1 {
                is_self = false;
            }
            id += ((d + m + off - 1) % m) * stride;
            stride *= m;
        }
        if !is_self {
            out.push(id);
        }
    }
    out
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut j = i;
    while parent[j] != r {
        let next = parent[j];
        parent[j] = r;
        j = next;
    }
    r
}

/// Locates all components of `F = 0` from a seed grid of
/// `grid_per_axis^n` cell centers.
pub fn find_components(defect: &DefectEvaluator, opts: &SearchOptions) -> Result<ComponentSearch> {
    if defect.q() != 1 {
        return Err(Error::UnsupportedCodimension(defect.q()));
    }
    let n = defect.n();
    let m = opts.grid_per_axis;
    let h = 1.0 / m as f64;
    let grid = sample_grid(n, m);
    let raw: Vec<Option<DVector<f64>>> = grid.par_iter().map(|x| defect.eval(x).ok()).collect();
    let values: Vec<Option<f64>> = raw.iter().map(|v| v.as_ref().map(|v| v.norm())).collect();
    let lipschitz = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut best: f64 = 0.0;
            let mut stride = 1;
            for _ in 0..n {
                let digit = (i / stride) % m;
                let j = i - digit * stride + ((digit + 1) % m) * stride;
                if let (Some(a), Some(b)) = (&raw[i], &raw[j]) {
                    best = best.max((a - b).norm() / h);
                }
                stride *= m;
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    let threshold = 0.5 * (n as f64).sqrt() * h * lipschitz + opts.tol_zero;
    let seeds: Vec<usize> = (0..grid.len())
        .filter(|i| values[*i].is_some_and(|v| v < threshold))
        .collect();
    let refined: Vec<Option<(AmbientPoint, PointClassification)>> = seeds
        .par_iter()
        .map(|i| {
            let (x, r) = defect.refine(&grid[*i], opts.newton_max_iter)?;
            if r >= opts.tol_zero {
                return None;
            }
            let c = defect.classify(&x, opts.tol_rank).ok()?;
            Some((x, c))
        })
        .collect();

    let pos: std::collections::HashMap<usize, usize> = seeds.iter().enumerate().map(|(k, i)| (*i, k)).collect();
    let mut parent: Vec<usize> = (0..seeds.len()).collect();
    for (k, i) in seeds.iter().enumerate() {
        for j in grid_neighbors(*i, n, m) {
            if let Some(&l) = pos.get(&j) {
                let (a, b) = (find(&mut parent, k), find(&mut parent, l));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let cluster: Vec<usize> = (0..seeds.len()).map(|k| find(&mut parent, k)).collect();

    let mut warnings = Vec::new();
    let mut roots: Vec<usize> = cluster.clone();
    roots.sort_unstable();
    roots.dedup();
    for r in &roots {
        let members: Vec<usize> = (0..seeds.len()).filter(|k| cluster[*k] == *r).collect();
        if members.iter().all(|k| refined[*k].is_none()) {
            warnings.push(format!(
                "possible missed component near {:?}",
                grid[seeds[members[0]]].coords()
            ));
        }
    }

    let mut components: Vec<CoincidenceComponent> = Vec::new();
    let mut degenerate_points: std::collections::BTreeMap<usize, Vec<(AmbientPoint, PointClassification)>> =
        Default::default();
    for (k, item) in refined.iter().enumerate() {
        let Some((x, c)) = item else { continue };
        if c.kind == PointKind::Degenerate {
            degenerate_points.entry(cluster[k]).or_default().push((x.clone(), c.clone()));
            continue;
        }
        if components.iter().any(|comp| comp.distance_to(x) < 2.0 * opts.step) {
            continue;
        }
        match trace_component(defect, x, opts) {
            Ok(comp) => components.push(comp),
            Err(Error::TraceStalled(at)) => {
                warnings.push(format!("trace stalled near degeneracy at {at:?}"));
                let stop = AmbientPoint::new(at);
                let sc = defect.classify(&stop, opts.tol_rank).unwrap_or_else(|_| c.clone());
                components.push(
                    CoincidenceComponent {
                        id: 0,
                        points: vec![x.clone(), stop],
                        classifications: vec![c.clone(), sc],
                        charts: vec![0, 0],
                        closed: false,
                        degenerate: true,
                        sign: None,
                        sign_changes: 0,
                        unresolved_sign_changes: 0,
                        arclength: 0.0,
                    }
                    .finish(opts.fold_resolution),
                );
            }
            Err(Error::TraceNotClosed(len)) => {
                warnings.push(format!("trace did not close after arclength {len}"));
                components.push(
                    CoincidenceComponent {
                        id: 0,
                        points: vec![x.clone()],
                        classifications: vec![c.clone()],
                        charts: vec![0],
                        closed: false,
                        degenerate: true,
                        sign: None,
                        sign_changes: 0,
                        unresolved_sign_changes: 0,
                        arclength: len,
                    }
                    .finish(opts.fold_resolution),
                );
            }
            Err(e) => return Err(e),
        }
    }
    for (_, pts) in degenerate_points {
        let (points, classifications): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
        let charts = vec![0; points.len()];
        components.push(
            CoincidenceComponent {
                id: 0,
                points,
                classifications,
                charts,
                closed: false,
                degenerate: true,
                sign: None,
                sign_changes: 0,
                unresolved_sign_changes: 0,
                arclength: 0.0,
            }
            .finish(opts.fold_resolution),
        );
    }

    let mut kept: Vec<CoincidenceComponent> = Vec::new();
    for comp in components {
        if !kept.iter().any(|k| k.hausdorff(&comp) < opts.dedup_radius) {
            kept.push(comp);
        }
    }
    for (id, comp) in kept.iter_mut().enumerate() {
        comp.id = id;
    }
    Ok(ComponentSearch {
        components: kept,
        warnings,
        grid_per_axis: m,
        seeds: seeds.len(),
        converged: refined.iter().filter(|r| r.is_some()).count(),
        lipschitz,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::FourierSeries;
    use crate::geometry::{make_linear_torus_foliation, FoliatedAtlas};
    use crate::maps::MapFamily;
    use std::f64::consts::TAU;
    use std::sync::{Arc, OnceLock};

    fn t2() -> Arc<FoliatedAtlas> {
        static A: OnceLock<Arc<FoliatedAtlas>> = OnceLock::new();
        A.get_or_init(|| Arc::new(make_linear_torus_foliation(2, &[1]).unwrap())).clone()
    }

    fn leaf_map(atlas: &Arc<FoliatedAtlas>, series: FourierSeries) -> FoliationMapSpec {
        FoliationMapSpec::from_family("phi", atlas, MapFamily::LeafAffine { matrix: None, offset: vec![], leaf_terms: vec![series] })
            .unwrap()
    }

    fn fixed_point_defect(phi: &FoliationMapSpec) -> DefectEvaluator {
        DefectEvaluator::new(&FoliationMapSpec::identity(&phi.source), phi).unwrap()
    }

    #[test]
    fn defect_examples() {
        let a = t2();
        let phi = leaf_map(&a, FourierSeries::constant(0.25).with_sin(&[1], 0.1));
        let psi = FoliationMapSpec::from_family("psi", &a, MapFamily::Translation { offset: vec![0.0, 0.25] }).unwrap();
        let d = DefectEvaluator::new(&phi, &psi).unwrap();
        for y in [0.0, 0.1, 0.37, 0.8] {
            let x = AmbientPoint::new(vec![0.3, y]);
            assert!((d.eval(&x).unwrap()[0] - 0.1 * (TAU * y).sin()).abs() < 1e-12);
        }
        let same = DefectEvaluator::new(&phi, &phi).unwrap();
        assert_eq!(same.eval(&AmbientPoint::new(vec![0.3, 0.4])).unwrap()[0], 0.0);
        let fp = fixed_point_defect(&leaf_map(&a, FourierSeries::zero().with_sin(&[1], 0.05)));
        let x = AmbientPoint::new(vec![0.3, 0.2]);
        assert!((fp.eval(&x).unwrap()[0] + 0.05 * (TAU * 0.2).sin()).abs() < 1e-12);
        let side = FoliationMapSpec::from_family("s", &a, MapFamily::Translation { offset: vec![0.1, 0.0] }).unwrap();
        let err = DefectEvaluator::new(&FoliationMapSpec::identity(&a), &side).unwrap_err();
        assert!(err.to_string().contains("same leaf-space map"));
    }

    #[test]
    fn classification_examples() {
        let a = t2();
        let sine = fixed_point_defect(&leaf_map(&a, FourierSeries::zero().with_sin(&[1], 0.05)));
        let c = classify_point(&sine, &AmbientPoint::new(vec![0.7, 0.0]), TOL_RANK).unwrap();
        assert_eq!(c.kind, PointKind::LeafwiseSimple);
        assert!((c.sigma_leaf - 0.1 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(c.sign, Some(-1));
        let degen = fixed_point_defect(&leaf_map(&a, FourierSeries::constant(0.05).with_cos(&[1], -0.05)));
        let c = classify_point(&degen, &AmbientPoint::new(vec![0.7, 0.0]), TOL_RANK).unwrap();
        assert_eq!(c.kind, PointKind::Degenerate);
        assert_eq!(c.sign, None);
    }

    #[test]
    fn graph_over_transversal_is_simple() {
        let a = t2();
        let mixed = FoliationMapSpec::from_family(
            "m",
            &a,
            MapFamily::LeafAffine {
                matrix: Some(vec![vec![2]]),
                offset: vec![FourierSeries::zero().with_sin(&[1], -0.1)],
                leaf_terms: vec![],
            },
        )
        .unwrap();
        let d = fixed_point_defect(&mixed);
        let x = AmbientPoint::new(vec![0.25, 0.9]);
        let (root, r) = d.refine(&x, 100).unwrap();
        assert!(r < TOL_ZERO);
        let c = d.classify(&root, TOL_RANK).unwrap();
        assert_eq!(c.kind, PointKind::LeafwiseSimple);
    }

    #[test]
    fn sine_components() {
        let a = t2();
        let d = fixed_point_defect(&leaf_map(&a, FourierSeries::zero().with_sin(&[1], 0.05)));
        let search = find_components(&d, &SearchOptions::default()).unwrap();
        assert_eq!(search.components.len(), 2);
        let mut ys: Vec<(f64, i8)> = search
            .components
            .iter()
            .map(|c| {
                let y = c.points[0].coords()[1];
                (if y > 0.75 { y - 1.0 } else { y }, c.sign.unwrap())
            })
            .collect();
        ys.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(ys[0].0.abs() < 1e-9 && ys[0].1 == -1);
        assert!((ys[1].0 - 0.5).abs() < 1e-9 && ys[1].1 == 1);
        for c in &search.components {
            assert!(c.closed && c.is_leafwise_simple());
            assert!((c.arclength - 1.0).abs() < 1e-9);
            for p in &c.points {
                assert!(d.eval(p).unwrap().norm() < TOL_ZERO);
            }
        }
    }

    #[test]
    fn no_zeros_when_shift_dominates() {
        let a = t2();
        let d = fixed_point_defect(&leaf_map(&a, FourierSeries::constant(0.3).with_sin(&[1], 0.1)));
        let search = find_components(&d, &SearchOptions::default()).unwrap();
        assert!(search.components.is_empty());
    }

    #[test]
    fn degenerate_circle_flagged() {
        let a = t2();
        let d = fixed_point_defect(&leaf_map(&a, FourierSeries::constant(0.05).with_cos(&[1], -0.05)));
        let search = find_components(&d, &SearchOptions::default()).unwrap();
        assert!(!search.components.is_empty());
        assert!(search.components.iter().all(|c| c.degenerate));
        assert!(!search.is_ls_transverse());
    }

    #[test]
    fn degenerate_seed_cannot_be_traced() {
        let a = t2();
        let d = fixed_point_defect(&leaf_map(&a, FourierSeries::constant(0.05).with_cos(&[1], -0.05)));
        let err = trace_component(&d, &AmbientPoint::new(vec![0.5, 0.0]), &SearchOptions::default()).unwrap_err();
        assert!(err.to_string().contains("trace stalled"));
    }

    #[test]
    fn sign_changes_match_crossings() {
        let a = t2();
        let d = fixed_point_defect(&leaf_map(&a, FourierSeries::zero().with_sin(&[1], 0.05).with_cos(&[2], 0.01)));
        let search = find_components(&d, &SearchOptions::default()).unwrap();
        for i in 0..400 {
            let x = (i as f64 + 0.5) / 400.0;
            let vals: Vec<f64> = (0..400)
                .map(|j| d.eval(&AmbientPoint::new(vec![x, (j as f64 + 0.5) / 400.0])).unwrap()[0])
                .collect();
            let changes = (0..400).filter(|j| vals[*j].signum() != vals[(j + 1) % 400].signum()).count();
            assert_eq!(changes, search.components.len());
        }
    }

    #[test]
    fn codimension_two_rejected() {
        let a = Arc::new(make_linear_torus_foliation(3, &[2]).unwrap());
        let d = DefectEvaluator::new(&FoliationMapSpec::identity(&a), &FoliationMapSpec::identity(&a)).unwrap();
        let err = find_components(&d, &SearchOptions { grid_per_axis: 4, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("codimension"));
    }
}
