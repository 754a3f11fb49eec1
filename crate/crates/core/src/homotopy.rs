//! Integrable homotopies and perturbation to ls-transversality.
//!
//! A chained homotopy from `φ` to a plaquewise-close `ψ` runs through the
//! cells of an sp-neighborhood one after another. During the `i`-th time
//! slice the current map is pulled towards `ψ` in target chart `i` by the
//! convex combination `(1 - s λ_i(x)) θ'(y) + s λ_i(x) θ'(ψ x)`. Both points
//! lie in one plaque of that chart, so every track stays in a leaf.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coincidence::{find_components, ComponentSearch, DefectEvaluator, SearchOptions};
use crate::error::{Error, Result};
use crate::geometry::{FoliatedAtlas, TOL_PLAQUE};
use crate::maps::{CompositeMap, FoliationMapSpec, LeafBumpShift, SPNeighborhoodSpec, SpReport};
use crate::torus::{sample_grid, AmbientPoint};

type TrackFn = Arc<dyn Fn(&AmbientPoint, f64) -> AmbientPoint + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Chained {
        nbhd: Arc<SPNeighborhoodSpec>,
        psi: FoliationMapSpec,
    },
    Concat(Box<IntegrableHomotopy>, Box<IntegrableHomotopy>),
    Reverse(Box<IntegrableHomotopy>),
    Func(TrackFn),
}

/// A homotopy `H: M × [0, 1] → M` into the target foliation.
#[derive(Clone)]
pub struct IntegrableHomotopy {
    pub target: Arc<FoliatedAtlas>,
    kind: Kind,
}

impl fmt::Debug for IntegrableHomotopy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Chained { nbhd, psi } => f
                .debug_struct("Chained")
                .field("from", &nbhd.base.name)
                .field("to", &psi.name)
                .field("segments", &nbhd.cells.len())
                .finish(),
            Kind::Concat(a, b) => f.debug_tuple("Concat").field(a).field(b).finish(),
            Kind::Reverse(a) => f.debug_tuple("Reverse").field(a).finish(),
            Kind::Func(_) => f.write_str("Func"),
        }
    }
}

impl IntegrableHomotopy {
    /// Wraps an arbitrary track function. Nothing is checked here; use
    /// [`leaf_track_check`].
    pub fn from_fn(
        target: &Arc<FoliatedAtlas>,
        f: impl Fn(&AmbientPoint, f64) -> AmbientPoint + Send + Sync + 'static,
    ) -> Self {
        IntegrableHomotopy {
            target: target.clone(),
            kind: Kind::Func(Arc::new(f)),
        }
    }

    /// Number of chart segments in the time partition.
    pub fn segments(&self) -> usize {
        match &self.kind {
            Kind::Chained { nbhd, .. } => nbhd.cells.len(),
            Kind::Concat(a, b) => a.segments() + b.segments(),
            Kind::Reverse(a) => a.segments(),
            Kind::Func(_) => 1,
        }
    }

    /// `self` on `[0, 1/2]`, then `other` on `[1/2, 1]`.
    pub fn then(self, other: IntegrableHomotopy) -> IntegrableHomotopy {
        IntegrableHomotopy {
            target: self.target.clone(),
            kind: Kind::Concat(Box::new(self), Box::new(other)),
        }
    }

    pub fn reversed(self) -> IntegrableHomotopy {
        IntegrableHomotopy {
            target: self.target.clone(),
            kind: Kind::Reverse(Box::new(self)),
        }
    }

    pub fn evaluate(&self, x: &AmbientPoint, t: f64) -> AmbientPoint {
        match &self.kind {
            Kind::Chained { nbhd, psi } => chained_eval(nbhd, psi, x, t),
            Kind::Concat(a, b) => {
                if t < 0.5 {
                    a.evaluate(x, 2.0 * t)
                } else {
                    b.evaluate(x, 2.0 * t - 1.0)
                }
            }
            Kind::Reverse(a) => a.evaluate(x, 1.0 - t),
            Kind::Func(f) => f(x, t),
        }
    }
}

fn chained_eval(nbhd: &SPNeighborhoodSpec, psi: &FoliationMapSpec, x: &AmbientPoint, t: f64) -> AmbientPoint {
    let phi = &nbhd.base;
    if t <= 0.0 {
        return phi.eval(x);
    }
    if t >= 1.0 {
        return psi.eval(x);
    }
    let target = &phi.target;
    let q = target.q;
    let n = nbhd.cells.len() as f64;
    let z = psi.eval(x);
    let mut y = phi.eval(x);
    for i in nbhd.relevant_cells(x) {
        let start = i as f64 / n;
        if t <= start {
            break;
        }
        let lambda = nbhd.bump(i, x);
        if lambda == 0.0 {
            continue;
        }
        let w = ((t - start) * n).min(1.0) * lambda;
        let tc = nbhd.cells[i].target_chart;
        let cy = target.raw_coords(tc, &y);
        let cz = target.raw_coords(tc, &z);
        let c: Vec<f64> = cy.iter().zip(&cz).map(|(a, b)| (1.0 - w) * a + w * b).collect();
        y = target.from_coords(tc, &c[..q], &c[q..]);
    }
    y
}

/// Chained convex-combination homotopy from `φ` to `ψ` over the cells of
/// `nbhd`, whose base must agree with `φ`.
pub fn straight_line_homotopy(
    phi: &FoliationMapSpec,
    psi: &FoliationMapSpec,
    nbhd: &SPNeighborhoodSpec,
) -> Result<IntegrableHomotopy> {
    let base_gap = sample_grid(phi.source.n, 5)
        .iter()
        .map(|x| phi.eval(x).torus_distance(&nbhd.base.eval(x)))
        .fold(0.0, f64::max);
    if base_gap > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "neighborhood base differs from the start map by {base_gap:.3e}"
        )));
    }
    let rep = nbhd.contains(psi);
    if !rep.contains {
        return Err(Error::NotPlaquewiseClose(format!(
            "violations (inclusion, plaque, closeness) = {:?}, max plaque deviation {:.3e}",
            rep.violations, rep.max_plaque_deviation
        )));
    }
    Ok(IntegrableHomotopy {
        target: phi.target.clone(),
        kind: Kind::Chained {
            nbhd: Arc::new(nbhd.clone()),
            psi: psi.clone(),
        },
    })
}

pub fn evaluate_homotopy(h: &IntegrableHomotopy, x: &AmbientPoint, t: f64) -> AmbientPoint {
    h.evaluate(x, t)
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafTrackReport {
    pub samples: usize,
    pub times: usize,
    pub max_violation: f64,
    pub worst: Option<Vec<f64>>,
    pub pass: bool,
}

/// Transverse drift of tracks `t ↦ H(x, t)` on `times + 1` equally spaced
/// times. The drift between two points is measured in a chart holding both
/// and is `1` when no chart does.
pub fn leaf_track_check(h: &IntegrableHomotopy, samples: &[AmbientPoint], times: usize) -> LeafTrackReport {
    let target = &h.target;
    let q = target.q;
    let drift = |a: &AmbientPoint, b: &AmbientPoint| -> f64 {
        let Ok(ids) = target.charts_containing(a) else {
            return 1.0;
        };
        ids.into_iter()
            .filter(|id| target.contains(*id, b))
            .map(|id| {
                let ca = target.raw_coords(id, a);
                let cb = target.raw_coords(id, b);
                (0..q).map(|k| (ca[k] - cb[k]).abs()).fold(0.0, f64::max)
            })
            .fold(1.0, f64::min)
    };
    let times = times.max(1);
    let per_sample: Vec<f64> = samples
        .par_iter()
        .map(|x| {
            let start = h.evaluate(x, 0.0);
            (1..=times)
                .map(|k| drift(&start, &h.evaluate(x, k as f64 / times as f64)))
                .fold(0.0, f64::max)
        })
        .collect();
    let (worst, max_violation) = per_sample
        .iter()
        .enumerate()
        .fold((None, 0.0), |(w, m), (i, v)| if *v > m { (Some(i), *v) } else { (w, m) });
    LeafTrackReport {
        samples: samples.len(),
        times,
        max_violation,
        worst: worst.map(|i| samples[i].coords().to_vec()),
        pass: max_violation < TOL_PLAQUE,
    }
}

/// Which map of the pair receives the leafwise bump shifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSchedule {
    /// Radius of the first draw; later draws shrink by `ratio`.
    pub start_radius: f64,
    pub ratio: f64,
    pub max_attempts: usize,
    /// `C^0` radius of the neighborhood the perturbed map is checked against.
    pub sp_epsilon: f64,
}

impl Default for PerturbationSchedule {
    fn default() -> Self {
        PerturbationSchedule {
            start_radius: 1e-2,
            ratio: 0.5,
            max_attempts: 20,
            sp_epsilon: 0.1,
        }
    }
}

impl PerturbationSchedule {
    pub fn radius(&self, attempt: usize) -> f64 {
        self.start_radius * self.ratio.powi(attempt as i32)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentSummary {
    pub id: usize,
    pub points: usize,
    pub closed: bool,
    pub degenerate: bool,
    pub sign: Option<i8>,
    pub sign_changes: usize,
    pub unresolved_sign_changes: usize,
    pub arclength: f64,
}

impl ComponentSummary {
    pub fn of(search: &ComponentSearch) -> Vec<ComponentSummary> {
        search
            .components
            .iter()
            .map(|c| ComponentSummary {
                id: c.id,
                points: c.points.len(),
                closed: c.closed,
                degenerate: c.degenerate,
                sign: c.sign,
                sign_changes: c.sign_changes,
                unresolved_sign_changes: c.unresolved_sign_changes,
                arclength: c.arclength,
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationCertificate {
    pub seed: u64,
    pub slot: Slot,
    /// Number of random draws; `0` when the input was accepted unchanged.
    pub attempts: usize,
    pub radii: Vec<f64>,
    /// Largest `|c_i|` of each draw.
    pub magnitudes: Vec<f64>,
    /// Shifts `(chart, c_i)` of the last draw.
    pub shifts: Vec<(usize, Vec<f64>)>,
    pub verified: bool,
    pub components: Vec<ComponentSummary>,
    pub sp_report: Option<SpReport>,
    pub leaf_track: Option<LeafTrackReport>,
    pub warnings: Vec<String>,
}

/// Result of a successful perturbation: the pair `(ξ, ζ)` and its located
/// components.
#[derive(Clone, Debug)]
pub struct Perturbed {
    pub xi: FoliationMapSpec,
    pub zeta: FoliationMapSpec,
    pub search: ComponentSearch,
    pub certificate: PerturbationCertificate,
}

/// One shift per chart, each uniform in the ball of the given radius.
/// Draw `attempt` uses its own stream of the seeded generator.
pub fn draw_shifts(atlas: &FoliatedAtlas, seed: u64, attempt: usize, radius: f64) -> Vec<(usize, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt as u64);
    let p = atlas.p;
    atlas
        .charts
        .iter()
        .map(|c| {
            if radius <= 0.0 {
                return (c.id, vec![0.0; p]);
            }
            loop {
                let v: Vec<f64> = (0..p).map(|_| rng.gen_range(-radius..=radius)).collect();
                if v.iter().map(|a| a * a).sum::<f64>() <= radius * radius {
                    return (c.id, v);
                }
            }
        })
        .collect()
}

/// `S_N ∘ … ∘ S_1 ∘ map`.
pub fn perturbed_map(map: &FoliationMapSpec, shifts: &[(usize, Vec<f64>)]) -> FoliationMapSpec {
    let bump = LeafBumpShift {
        atlas: map.target.clone(),
        shifts: shifts.to_vec(),
    };
    let evaluator = Arc::new(CompositeMap {
        first: map.evaluator.clone(),
        second: Arc::new(bump),
    });
    FoliationMapSpec::custom(
        &format!("{}~", map.name),
        &map.source,
        &map.target,
        evaluator,
        map.leaf_preserving,
    )
}

/// Accepted when every component is closed and ls-transverse and every
/// leafwise sign change is resolved to the fold resolution.
pub fn is_acceptable(search: &ComponentSearch) -> bool {
    search.is_ls_transverse() && search.components.iter().all(|c| c.unresolved_sign_changes == 0)
}

/// Perturbs the map in `slot` by random leafwise bump shifts until the
/// coincidence set of the pair is ls-transverse. An acceptable input is
/// returned unchanged with `attempts = 0`.
pub fn perturb_to_ls_transversality(
    phi: &FoliationMapSpec,
    psi: &FoliationMapSpec,
    seed: u64,
    schedule: &PerturbationSchedule,
    slot: Slot,
    opts: &SearchOptions,
) -> Result<Perturbed> {
    let search = find_components(&DefectEvaluator::new(phi, psi)?, opts)?;
    let mut cert = PerturbationCertificate {
        seed,
        slot,
        attempts: 0,
        radii: Vec::new(),
        magnitudes: Vec::new(),
        shifts: Vec::new(),
        verified: false,
        components: ComponentSummary::of(&search),
        sp_report: None,
        leaf_track: None,
        warnings: search.warnings.clone(),
    };
    if is_acceptable(&search) {
        cert.verified = true;
        return Ok(Perturbed {
            xi: phi.clone(),
            zeta: psi.clone(),
            search,
            certificate: cert,
        });
    }
    let base = match slot {
        Slot::First => phi,
        Slot::Second => psi,
    };
    for attempt in 0..schedule.max_attempts {
        let radius = schedule.radius(attempt);
        let shifts = draw_shifts(&base.target, seed, attempt, radius);
        let moved = perturbed_map(base, &shifts);
        let (first, second) = match slot {
            Slot::First => (&moved, psi),
            Slot::Second => (phi, &moved),
        };
        cert.attempts = attempt + 1;
        cert.radii.push(radius);
        cert.magnitudes.push(
            shifts
                .iter()
                .map(|(_, c)| c.iter().map(|a| a * a).sum::<f64>().sqrt())
                .fold(0.0, f64::max),
        );
        cert.shifts = shifts;
        let search = match DefectEvaluator::new(first, second).and_then(|d| find_components(&d, opts)) {
            Ok(s) => s,
            Err(e) => {
                cert.warnings.push(format!("draw {}: {e}", attempt + 1));
                continue;
            }
        };
        cert.components = ComponentSummary::of(&search);
        if !is_acceptable(&search) {
            continue;
        }
        cert.verified = true;
        cert.warnings.extend(search.warnings.iter().cloned());
        match SPNeighborhoodSpec::around(base, schedule.sp_epsilon, 0) {
            Ok(nbhd) => {
                cert.sp_report = Some(nbhd.contains(&moved));
                match straight_line_homotopy(base, &moved, &nbhd) {
                    Ok(h) => {
                        let pts = sample_grid(base.source.n, 4);
                        cert.leaf_track = Some(leaf_track_check(&h, &pts, 4));
                    }
                    Err(e) => cert.warnings.push(format!("no homotopy witness: {e}")),
                }
            }
            Err(e) => cert.warnings.push(format!("no neighborhood witness: {e}")),
        }
        return Ok(Perturbed {
            xi: first.clone(),
            zeta: second.clone(),
            search,
            certificate: cert,
        });
    }
    Err(Error::TransversalityNotAchieved(Box::new(cert)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::PointKind;
    use crate::fourier::FourierSeries;
    use crate::geometry::{make_linear_torus_foliation, AtlasOptions};
    use crate::maps::MapFamily;
    use std::sync::OnceLock;

    fn t2() -> Arc<FoliatedAtlas> {
        static A: OnceLock<Arc<FoliatedAtlas>> = OnceLock::new();
        A.get_or_init(|| Arc::new(make_linear_torus_foliation(2, &[1]).unwrap())).clone()
    }

    fn t2_wide() -> Arc<FoliatedAtlas> {
        static A: OnceLock<Arc<FoliatedAtlas>> = OnceLock::new();
        A.get_or_init(|| Arc::new(FoliatedAtlas::linear_torus(2, &[1], AtlasOptions::default().with_margin(0.3)).unwrap()))
            .clone()
    }

    fn translation(a: &Arc<FoliatedAtlas>, dy: f64) -> FoliationMapSpec {
        FoliationMapSpec::from_family("tr", a, MapFamily::Translation { offset: vec![0.0, dy] }).unwrap()
    }

    fn leaf_map(a: &Arc<FoliatedAtlas>, series: FourierSeries) -> FoliationMapSpec {
        FoliationMapSpec::from_family("phi", a, MapFamily::LeafAffine { matrix: None, offset: vec![], leaf_terms: vec![series] })
            .unwrap()
    }

    #[test]
    fn constant_homotopy_when_maps_agree() {
        let a = t2();
        let phi = leaf_map(&a, FourierSeries::zero().with_sin(&[1], 0.05));
        let nbhd = SPNeighborhoodSpec::around(&phi, 0.1, 0).unwrap();
        let h = straight_line_homotopy(&phi, &phi, &nbhd).unwrap();
        for x in sample_grid(2, 7) {
            for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
                assert!(h.evaluate(&x, t).torus_distance(&phi.eval(&x)) < 1e-14);
            }
        }
    }

    #[test]
    fn translation_homotopy_formula() {
        let a = t2_wide();
        let id = FoliationMapSpec::identity(&a);
        let psi = translation(&a, 0.05);
        let nbhd = SPNeighborhoodSpec::with_cells(&id, 16, 0.1, 0).unwrap();
        let h = straight_line_homotopy(&id, &psi, &nbhd).unwrap();
        let m = nbhd.cells.len();
        for (i, cell) in nbhd.cells.iter().enumerate().step_by(7) {
            let center: Vec<f64> = cell.k.lo.iter().zip(&cell.k.width).map(|(l, w)| l + 0.5 * w).collect();
            let x = AmbientPoint::new(center.clone());
            let mid = h.evaluate(&x, (i as f64 + 0.5) / m as f64);
            assert!(mid.torus_distance(&AmbientPoint::new(vec![center[0], center[1] + 0.025])) < 1e-14);
        }
        for x in sample_grid(2, 9) {
            assert_eq!(h.evaluate(&x, 0.0), x);
            assert_eq!(h.evaluate(&x, 1.0), psi.eval(&x));
            let mut last = 0.0;
            for k in 0..=20 {
                let y = h.evaluate(&x, k as f64 / 20.0);
                assert!((y.coords()[0] - x.coords()[0]).abs() < 1e-15);
                let s = crate::torus::nearest_rep(y.coords()[1] - x.coords()[1]) / 0.05;
                assert!((-1e-12..=1.0 + 1e-12).contains(&s) && s >= last - 1e-12);
                last = s;
            }
        }
        let rep = leaf_track_check(&h, &sample_grid(2, 6), 10);
        assert!(rep.pass && rep.max_violation == 0.0);
    }

    #[test]
    fn far_maps_rejected() {
        let a = t2();
        let id = FoliationMapSpec::identity(&a);
        let nbhd = SPNeighborhoodSpec::around(&id, 1.0, 0).unwrap();
        let err = straight_line_homotopy(&id, &translation(&a, 0.5), &nbhd).unwrap_err();
        assert!(err.to_string().contains("not plaquewise close"));
    }

    #[test]
    fn leaf_track_detects_transverse_motion() {
        let a = t2();
        let bad = IntegrableHomotopy::from_fn(&a, |x, t| x.translated(&[0.1 * t, 0.0]));
        let rep = leaf_track_check(&bad, &sample_grid(2, 4), 4);
        assert!(!rep.pass);
        assert!((rep.max_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn concatenation_and_reversal_stay_integrable() {
        let a = t2_wide();
        let id = FoliationMapSpec::identity(&a);
        let psi = translation(&a, 0.05);
        let nbhd = SPNeighborhoodSpec::with_cells(&id, 16, 0.1, 0).unwrap();
        let h = straight_line_homotopy(&id, &psi, &nbhd).unwrap();
        let loop_h = h.clone().then(h.reversed());
        let pts = sample_grid(2, 5);
        assert!(leaf_track_check(&loop_h, &pts, 16).pass);
        for x in &pts {
            assert!(loop_h.evaluate(x, 1.0).torus_distance(x) < 1e-15);
        }
    }

    #[test]
    fn transverse_input_left_unchanged() {
        let a = t2();
        let phi = leaf_map(&a, FourierSeries::zero().with_sin(&[1], 0.05));
        let out = perturb_to_ls_transversality(
            &FoliationMapSpec::identity(&a),
            &phi,
            7,
            &PerturbationSchedule::default(),
            Slot::Second,
            &SearchOptions::default(),
        )
        .unwrap();
        assert_eq!(out.certificate.attempts, 0);
        assert!(out.certificate.verified);
        assert_eq!(out.search.components.len(), 2);
    }

    #[test]
    fn degenerate_input_perturbed() {
        let a = t2();
        let phi = leaf_map(&a, FourierSeries::constant(0.05).with_cos(&[1], -0.05));
        let id = FoliationMapSpec::identity(&a);
        let out =
            perturb_to_ls_transversality(&id, &phi, 3, &PerturbationSchedule::default(), Slot::Second, &SearchOptions::default())
                .unwrap();
        let cert = &out.certificate;
        assert!(cert.attempts >= 1 && cert.verified);
        assert!(cert.magnitudes.iter().zip(&cert.radii).all(|(m, r)| m <= r));
        assert!(cert.sp_report.as_ref().unwrap().contains);
        assert!(cert.leaf_track.as_ref().unwrap().pass);
        for c in &out.search.components {
            assert!(c.closed);
            assert!(c.classifications.iter().all(|k| k.kind != PointKind::Degenerate));
        }
        let again =
            perturb_to_ls_transversality(&id, &phi, 3, &PerturbationSchedule::default(), Slot::Second, &SearchOptions::default())
                .unwrap();
        assert_eq!(again.certificate.shifts, cert.shifts);
    }

    #[test]
    fn zero_draws_exhaust_schedule() {
        let a = t2();
        let phi = leaf_map(&a, FourierSeries::constant(0.05).with_cos(&[1], -0.05));
        let schedule = PerturbationSchedule {
            start_radius: 0.0,
            max_attempts: 3,
            ..Default::default()
        };
        let opts = SearchOptions {
            grid_per_axis: 32,
            ..Default::default()
        };
        let err = perturb_to_ls_transversality(&FoliationMapSpec::identity(&a), &phi, 1, &schedule, Slot::Second, &opts)
            .unwrap_err();
        match err {
            Error::TransversalityNotAchieved(cert) => {
                assert_eq!(cert.attempts, 3);
                assert!(!cert.verified);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn draws_lie_in_ball_and_differ_by_stream() {
        let a = t2();
        let d0 = draw_shifts(&a, 11, 0, 0.01);
        let d1 = draw_shifts(&a, 11, 1, 0.01);
        assert_eq!(d0.len(), a.charts.len());
        assert_ne!(d0, d1);
        assert_eq!(d0, draw_shifts(&a, 11, 0, 0.01));
        assert!(d0.iter().all(|(_, c)| c[0].abs() <= 0.01));
    }
}
