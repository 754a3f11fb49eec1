//! Λ-coincidence and Λ-Lefschetz numbers.
//!
//! `Coin_Λ(φ, ψ)` integrates the sign `ε = sign det(φ_* - ψ_*)` against a
//! holonomy-invariant transverse measure `Λ` over the leafwise-simple part
//! of the coincidence set of an ls-transverse representative of `(φ, ψ)`.
//! `L_Λ(φ)` is the value for the graph pair `(id, φ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coincidence::{find_components, CoincidenceComponent, DefectEvaluator, PointKind, SearchOptions};
use crate::error::{Error, Result};
use crate::homotopy::{
    leaf_track_check, perturb_to_ls_transversality, straight_line_homotopy, IntegrableHomotopy, PerturbationCertificate,
    PerturbationSchedule, Slot,
};
use crate::maps::{FoliationMapSpec, MapFamily, SPNeighborhoodSpec};
use crate::measure::{ChartAssignment, InvarianceReport, TransverseDensity, TOL_INV};
use crate::torus::{sample_grid, AmbientPoint};

pub const TOL_INVARIANCE: f64 = 1e-5;
pub const TOL_COMPOSITE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LefschetzOptions {
    pub search: SearchOptions,
    pub schedule: PerturbationSchedule,
    pub seed: u64,
    pub assignment: ChartAssignment,
    /// Transition samples for the holonomy-invariance check of `Λ`.
    pub measure_samples: usize,
    pub measure_tol: f64,
}

impl Default for LefschetzOptions {
    fn default() -> Self {
        LefschetzOptions {
            search: SearchOptions::default(),
            schedule: PerturbationSchedule::default(),
            seed: 0,
            assignment: ChartAssignment::PartitionOfUnity,
            measure_samples: 256,
            measure_tol: TOL_INV,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentContribution {
    pub id: usize,
    pub sign: Option<i8>,
    /// Signed integral `∫ ε Λ` over the component.
    pub contribution: f64,
    /// Unsigned `Λ`-mass of the integrated segments.
    pub mass: f64,
    pub points: usize,
    pub closed: bool,
    pub leafwise_simple: bool,
    pub sign_changes: usize,
    /// Mass of simple segments whose sign disagrees with the component
    /// orientation; `0` for a consistent trace.
    pub orientation_conflict: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LefschetzReport {
    pub value: f64,
    pub contributions: Vec<ComponentContribution>,
    /// Traced polylines of the representative that was integrated.
    #[serde(skip)]
    pub components: Vec<CoincidenceComponent>,
    pub perturbed: bool,
    pub certificate: PerturbationCertificate,
    pub measure: InvarianceReport,
    pub options: LefschetzOptions,
    pub warnings: Vec<String>,
}

/// `ε_{φ,ψ}(x)`, the sign of `det(φ_* - ψ_*)` on the leaf through `x` in
/// oriented frames.
pub fn epsilon_at(phi: &FoliationMapSpec, psi: &FoliationMapSpec, x: &AmbientPoint, tol_rank: f64) -> Result<i8> {
    let defect = DefectEvaluator::new(phi, psi)?;
    let c = defect.classify(x, tol_rank)?;
    if c.kind != PointKind::LeafwiseSimple || c.leaf_det.abs() < tol_rank.powi(defect.p() as i32) {
        return Err(Error::DegenerateSign);
    }
    Ok(if c.leaf_det > 0.0 { 1 } else { -1 })
}

/// `∫ ε Λ` over a traced component.
///
/// Along a traced curve the kernel direction of `DF` is continuous, and
/// `ε` agrees with the direction in which the curve crosses the leaves up
/// to one sign `σ` per component. The integral is therefore `σ ∫ h dt`
/// with `dt` signed, `σ` being read off the segments whose endpoints are
/// leafwise simple with equal sign. Stretches that are not leafwise simple
/// run along the leaves and carry no mass.
pub fn integrate_component(
    component: &CoincidenceComponent,
    lambda: &TransverseDensity,
    assignment: ChartAssignment,
) -> Result<ComponentContribution> {
    let pts = &component.points;
    let cls = &component.classifications;
    let m = pts.len();
    let pairs = if component.closed { m } else { m.saturating_sub(1) };
    let mut signed = 0.0;
    let mut mass = 0.0;
    let mut agree = 0.0;
    let mut disagree = 0.0;
    let mut orientation = 0.0;
    for k in 0..pairs {
        let (i, j) = (k, (k + 1) % m);
        let seg = lambda.signed_segment_mass(&pts[i], &pts[j], assignment)?;
        signed += seg;
        mass += seg.abs();
        if let (Some(si), Some(sj)) = (cls[i].sign, cls[j].sign) {
            if si == sj && seg != 0.0 {
                let vote = f64::from(si) * seg.signum();
                if orientation == 0.0 {
                    orientation = vote;
                }
                if vote == orientation {
                    agree += seg.abs();
                } else {
                    disagree += seg.abs();
                }
            }
        }
    }
    let sigma = if agree >= disagree { orientation } else { -orientation };
    Ok(ComponentContribution {
        id: component.id,
        sign: component.sign,
        contribution: sigma * signed,
        mass,
        points: m,
        closed: component.closed,
        leafwise_simple: component.is_leafwise_simple(),
        sign_changes: component.sign_changes,
        orientation_conflict: agree.min(disagree),
    })
}

fn check_measure(lambda: &TransverseDensity, source: &FoliationMapSpec, opts: &LefschetzOptions) -> Result<InvarianceReport> {
    if !lambda.atlas.same_foliation(&source.source) {
        return Err(Error::Dimension("measure lives on a different foliation than the maps' source".into()));
    }
    let inv = lambda.check_holonomy_invariance(opts.measure_samples, opts.measure_tol);
    if !inv.pass {
        return Err(Error::MeasureNotInvariant(inv.max_violation));
    }
    Ok(inv)
}

fn is_identity(map: &FoliationMapSpec) -> bool {
    matches!(map.family, Some(MapFamily::Identity))
}

/// `Coin_Λ(φ, ψ)`. The pair is perturbed to ls-transversality when needed;
/// the perturbation acts on `φ`, or on `ψ` when `φ` is the identity.
pub fn lambda_coincidence(
    phi: &FoliationMapSpec,
    psi: &FoliationMapSpec,
    lambda: &TransverseDensity,
    opts: &LefschetzOptions,
) -> Result<LefschetzReport> {
    let measure = check_measure(lambda, phi, opts)?;
    let slot = if is_identity(phi) { Slot::Second } else { Slot::First };
    let rep = perturb_to_ls_transversality(phi, psi, opts.seed, &opts.schedule, slot, &opts.search)?;
    let contributions: Vec<ComponentContribution> = rep
        .search
        .components
        .par_iter()
        .map(|c| integrate_component(c, lambda, opts.assignment))
        .collect::<Result<_>>()?;
    let value = contributions.iter().map(|c| c.contribution).sum();
    let mut warnings = rep.certificate.warnings.clone();
    for c in &rep.search.components {
        if c.sign.is_none() && !c.degenerate {
            warnings.push(format!(
                "component {} folds over the leaves ({} sign changes)",
                c.id, c.sign_changes
            ));
        }
    }
    for c in &contributions {
        if c.orientation_conflict > 0.0 {
            warnings.push(format!(
                "component {} has sign conflicts over mass {:.3e}",
                c.id, c.orientation_conflict
            ));
        }
    }
    Ok(LefschetzReport {
        value,
        contributions,
        components: rep.search.components,
        perturbed: rep.certificate.attempts > 0,
        certificate: rep.certificate,
        measure,
        options: opts.clone(),
        warnings,
    })
}

/// `L_Λ(φ) = Coin_Λ(id, φ)`.
pub fn lambda_lefschetz(phi: &FoliationMapSpec, lambda: &TransverseDensity, opts: &LefschetzOptions) -> Result<LefschetzReport> {
    lambda_coincidence(&FoliationMapSpec::identity(&phi.source), phi, lambda, opts)
}

/// `∫_{Fix φ} ε_φ Λ` without perturbation. Requires every located fixed
/// point to be leafwise simple.
pub fn trace_formula_rhs(phi: &FoliationMapSpec, lambda: &TransverseDensity, opts: &LefschetzOptions) -> Result<f64> {
    let id = FoliationMapSpec::identity(&phi.source);
    check_measure(lambda, &id, opts)?;
    let search = find_components(&DefectEvaluator::new(&id, phi)?, &opts.search)?;
    if let Some(c) = search.components.iter().find(|c| !(c.closed && c.is_leafwise_simple())) {
        return Err(Error::HypothesisViolated(format!(
            "component {} near {:?} is not leafwise simple",
            c.id,
            c.points[0].coords()
        )));
    }
    let parts: Vec<f64> = search
        .components
        .par_iter()
        .map(|c| integrate_component(c, lambda, opts.assignment).map(|r| r.contribution))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessReport {
    /// Straight-line links in the chain; `0` when the maps agree.
    pub links: usize,
    pub leaf_track_violation: f64,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceMember {
    pub name: String,
    pub value: Option<f64>,
    pub error: Option<String>,
    pub witness: Vec<WitnessReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceSuiteReport {
    pub base_value: f64,
    pub members: Vec<InvarianceMember>,
    pub spread: f64,
    pub tol: f64,
    pub pass: bool,
}

fn maps_agree(a: &FoliationMapSpec, b: &FoliationMapSpec) -> bool {
    sample_grid(a.source.n, 5)
        .iter()
        .all(|x| a.eval(x).torus_distance(&b.eval(x)) == 0.0)
}

/// Integrable homotopy from `from` to `to`: a single straight-line
/// homotopy when `to` lies in the neighborhood of `from`, otherwise a chain
/// through interpolated family members.
pub fn homotopy_witness(
    from: &FoliationMapSpec,
    to: &FoliationMapSpec,
    nbhd: &SPNeighborhoodSpec,
) -> Result<(IntegrableHomotopy, usize)> {
    match straight_line_homotopy(from, to, nbhd) {
        Ok(h) => return Ok((h, 1)),
        Err(Error::NotPlaquewiseClose(msg)) => {
            let (Some(fa), Some(fb)) = (&from.family, &to.family) else {
                return Err(Error::NotPlaquewiseClose(msg));
            };
            for links in [2usize, 4, 8, 16] {
                let mut chain: Option<IntegrableHomotopy> = None;
                let mut prev = from.clone();
                let mut ok = true;
                for j in 1..=links {
                    let next = if j == links {
                        to.clone()
                    } else {
                        let Some(fam) = MapFamily::interpolate(fa, fb, j as f64 / links as f64) else {
                            return Err(Error::NotPlaquewiseClose(msg));
                        };
                        FoliationMapSpec::from_family(&format!("{}@{j}/{links}", to.name), &from.source, fam)?
                    };
                    let local = if j == 1 {
                        nbhd.clone()
                    } else {
                        SPNeighborhoodSpec::with_cells(&prev, nbhd.cells_per_axis, nbhd.epsilon, nbhd.order)?
                    };
                    match straight_line_homotopy(&prev, &next, &local) {
                        Ok(h) => {
                            chain = Some(match chain {
                                None => h,
                                Some(c) => c.then(h),
                            })
                        }
                        Err(Error::NotPlaquewiseClose(_)) => {
                            ok = false;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                    prev = next;
                }
                if ok {
                    return Ok((chain.expect("at least one link"), links));
                }
            }
            Err(Error::NotPlaquewiseClose(msg))
        }
        Err(e) => Err(e),
    }
}

fn witness_report(from: &FoliationMapSpec, to: &FoliationMapSpec, nbhd: &Option<SPNeighborhoodSpec>) -> WitnessReport {
    if maps_agree(from, to) {
        return WitnessReport {
            links: 0,
            leaf_track_violation: 0.0,
            pass: true,
            error: None,
        };
    }
    let result = nbhd
        .as_ref()
        .ok_or_else(|| Error::NotPlaquewiseClose("no neighborhood around the base".into()))
        .and_then(|n| homotopy_witness(from, to, n));
    match result {
        Ok((h, links)) => {
            let track = leaf_track_check(&h, &sample_grid(from.source.n, 3), 8);
            WitnessReport {
                links,
                leaf_track_violation: track.max_violation,
                pass: track.pass,
                error: None,
            }
        }
        Err(e) => WitnessReport {
            links: 0,
            leaf_track_violation: f64::NAN,
            pass: false,
            error: Some(e.to_string()),
        },
    }
}

/// Computes `Coin_Λ` for the base pair and every family member, each with
/// an integrable-homotopy witness to the base. Passes when all values lie
/// within `TOL_INVARIANCE` of each other and every witness holds.
pub fn verify_homotopy_invariance(
    base: (&FoliationMapSpec, &FoliationMapSpec),
    family: &[(FoliationMapSpec, FoliationMapSpec)],
    lambda: &TransverseDensity,
    opts: &LefschetzOptions,
) -> Result<InvarianceSuiteReport> {
    let base_value = lambda_coincidence(base.0, base.1, lambda, opts)?.value;
    let eps = opts.schedule.sp_epsilon;
    let needs = |k: usize| family.iter().any(|m| !maps_agree(if k == 0 { base.0 } else { base.1 }, if k == 0 { &m.0 } else { &m.1 }));
    let nbhd0 = needs(0).then(|| SPNeighborhoodSpec::around(base.0, eps, 0).ok()).flatten();
    let nbhd1 = needs(1).then(|| SPNeighborhoodSpec::around(base.1, eps, 0).ok()).flatten();
    let mut members = Vec::with_capacity(family.len());
    for (phi, psi) in family {
        let witness = vec![witness_report(base.0, phi, &nbhd0), witness_report(base.1, psi, &nbhd1)];
        let (value, error) = match lambda_coincidence(phi, psi, lambda, opts) {
            Ok(r) => (Some(r.value), None),
            Err(e) => (None, Some(e.to_string())),
        };
        members.push(InvarianceMember {
            name: format!("({}, {})", phi.name, psi.name),
            value,
            error,
            witness,
        });
    }
    let values: Vec<f64> = std::iter::once(base_value)
        .chain(members.iter().filter_map(|m| m.value))
        .collect();
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = spread < TOL_INVARIANCE && members.iter().all(|m| m.value.is_some() && m.witness.iter().all(|w| w.pass));
    Ok(InvarianceSuiteReport {
        base_value,
        members,
        spread,
        tol: TOL_INVARIANCE,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompositeReport {
    pub coincidence: f64,
    pub lefschetz: f64,
    pub difference: f64,
    /// Defect of `φ_* Λ = Λ` on sampled transversals.
    pub pushforward_defect: f64,
    pub pass: bool,
}

/// Compares `Coin_Λ(φ, ψ)` with `L_Λ(ψ ∘ φ⁻¹)` for invertible,
/// `Λ`-preserving `φ`.
pub fn composite_identity_check(
    phi: &FoliationMapSpec,
    psi: &FoliationMapSpec,
    lambda: &TransverseDensity,
    opts: &LefschetzOptions,
) -> Result<CompositeReport> {
    let inverse = phi.inverse()?;
    let pushforward_defect = lambda.pushforward_defect(phi, 8)?;
    if pushforward_defect > opts.measure_tol {
        return Err(Error::MeasureNotInvariant(pushforward_defect));
    }
    let composite = inverse.then(psi);
    let composite = FoliationMapSpec {
        source: phi.source.clone(),
        ..composite
    };
    let coincidence = lambda_coincidence(phi, psi, lambda, opts)?.value;
    let lefschetz = lambda_lefschetz(&composite, lambda, opts)?.value;
    let difference = (coincidence - lefschetz).abs();
    Ok(CompositeReport {
        coincidence,
        lefschetz,
        difference,
        pushforward_defect,
        pass: difference < TOL_COMPOSITE,
    })
}
