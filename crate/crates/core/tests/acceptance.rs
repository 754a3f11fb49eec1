//! Acceptance run: one pass/fail line per criterion, nonzero exit on any
//! failure. Built without the libtest harness so the lines always print.

use std::sync::Arc;
use std::time::Instant;

use leafwise::coincidence::{find_components, DefectEvaluator, PointKind};
use leafwise::homotopy::{draw_shifts, perturbed_map};
use leafwise::torus::AmbientPoint;
use leafwise::{
    composite_identity_check, lambda_lefschetz, trace_formula_rhs, verify_homotopy_invariance, AtlasOptions,
    CircleMap, DensityFamily, FoliatedAtlas, FoliationMapSpec, FourierSeries, LefschetzOptions, LefschetzReport,
    MapFamily, TransverseDensity,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn t3() -> Arc<FoliatedAtlas> {
    Arc::new(FoliatedAtlas::linear_torus(3, &[1, 2], AtlasOptions::default().with_margin(0.3)).unwrap())
}

fn t2() -> Arc<FoliatedAtlas> {
    Arc::new(FoliatedAtlas::linear_torus(2, &[1], AtlasOptions::default()).unwrap())
}

fn cat(a: &Arc<FoliatedAtlas>, c: FourierSeries) -> FoliationMapSpec {
    FoliationMapSpec::from_family(
        "cat",
        a,
        MapFamily::leaf_affine(vec![vec![2, 1], vec![1, 1]], vec![c, FourierSeries::zero()], vec![]),
    )
    .unwrap()
}

fn sine(a: &Arc<FoliatedAtlas>) -> FoliationMapSpec {
    FoliationMapSpec::from_family("sine", a, MapFamily::LeafSine { amplitude: 0.05, shift: 0.0 }).unwrap()
}

fn degenerate(a: &Arc<FoliatedAtlas>) -> FoliationMapSpec {
    let series = FourierSeries::constant(0.05).with_cos(&[1], -0.05);
    FoliationMapSpec::from_family(
        "tangent",
        a,
        MapFamily::LeafAffine {
            matrix: None,
            offset: vec![],
            leaf_terms: vec![series],
        },
    )
    .unwrap()
}

fn opts_with_step(step: f64) -> LefschetzOptions {
    let mut o = LefschetzOptions::default();
    o.search.grid_per_axis = 64;
    o.search.step = step;
    o
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn criterion_1() -> Outcome {
    let a = t3();
    let phi = cat(&a, FourierSeries::zero().with_sin(&[1], 0.1));
    let lam = TransverseDensity::lebesgue(&a);
    let start = Instant::now();
    let r = lambda_lefschetz(&phi, &lam, &opts_with_step(1e-3)).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    check(
        (r.value + 1.0).abs() <= 1e-5 && secs < 30.0,
        format!("value {:.12}, {} component(s), {secs:.2} s", r.value, r.contributions.len()),
    )
}

fn criterion_2() -> Outcome {
    let a = t2();
    let lam = TransverseDensity::lebesgue(&a);
    let start = Instant::now();
    let r = lambda_lefschetz(&sine(&a), &lam, &opts_with_step(1e-3)).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let mut signs: Vec<(f64, Option<i8>)> = r
        .components
        .iter()
        .map(|c| {
            let ys: Vec<f64> = c.points.iter().map(|p| p.coords()[1]).collect();
            (circular_mean(&ys), c.sign)
        })
        .collect();
    signs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let near = |y: f64, target: f64| {
        let d = (y - target).rem_euclid(1.0);
        d.min(1.0 - d) < 1e-6
    };
    let shape = signs.len() == 2
        && signs.iter().any(|(y, s)| near(*y, 0.0) && *s == Some(-1))
        && signs.iter().any(|(y, s)| near(*y, 0.5) && *s == Some(1));
    check(
        r.value.abs() <= 1e-6 && shape && secs < 5.0,
        format!("value {:.3e}, components {signs:?}, {secs:.2} s", r.value),
    )
}

fn circular_mean(ys: &[f64]) -> f64 {
    let (s, c) = ys.iter().fold((0.0, 0.0), |acc, y| {
        let a = std::f64::consts::TAU * y;
        (acc.0 + a.sin(), acc.1 + a.cos())
    });
    (s.atan2(c) / std::f64::consts::TAU).rem_euclid(1.0)
}

fn criterion_3() -> Outcome {
    let a = t2();
    let phi = degenerate(&a);
    let id = FoliationMapSpec::identity(&a);
    let defect = DefectEvaluator::new(&id, &phi).map_err(err)?;
    let opts = LefschetzOptions::default();
    let direct = (0..8)
        .map(|k| defect.classify(&AmbientPoint::new(vec![k as f64 / 8.0, 0.0]), opts.search.tol_rank))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let flagged = direct.iter().all(|c| c.kind == PointKind::Degenerate);
    let search = find_components(&defect, &opts.search).map_err(err)?;
    let circle = search.components.iter().any(|c| c.degenerate);
    let lam = TransverseDensity::lebesgue(&a);
    let mut values = Vec::new();
    let mut first = 0;
    for seed in 0..50u64 {
        let o = LefschetzOptions { seed, ..opts.clone() };
        let r = lambda_lefschetz(&phi, &lam, &o).map_err(|e| format!("seed {seed}: {e}"))?;
        if r.certificate.attempts == 1 {
            first += 1;
        }
        values.push(r.value);
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst = max.abs().max(min.abs());
    check(
        flagged && circle && worst <= 1e-5 && max - min < 1e-5 && first >= 45,
        format!(
            "y=0 degenerate {flagged}, degenerate component {circle}, max |value| {worst:.3e}, spread {:.3e}, first-draw successes {first}/50",
            max - min
        ),
    )
}

fn criterion_4() -> Outcome {
    let a = t3();
    let lam = TransverseDensity::lebesgue(&a);
    let id = FoliationMapSpec::identity(&a);
    let base = cat(&a, FourierSeries::zero());
    let members = [
        FourierSeries::zero().with_sin(&[1], 0.1),
        FourierSeries::zero().with_cos(&[1], 0.1),
        FourierSeries::zero().with_sin(&[1], 0.05).with_cos(&[2], 0.05),
    ];
    let family: Vec<_> = members.into_iter().map(|c| (id.clone(), cat(&a, c))).collect();
    let rep = verify_homotopy_invariance((&id, &base), &family, &lam, &LefschetzOptions::default()).map_err(err)?;
    let values: Vec<f64> = std::iter::once(rep.base_value)
        .chain(rep.members.iter().filter_map(|m| m.value))
        .collect();
    let within = values.len() == 4 && values.iter().all(|v| (v + 1.0).abs() <= 1e-5);
    let links: Vec<usize> = rep.members.iter().map(|m| m.witness[1].links).collect();
    check(
        within && rep.pass,
        format!("values {values:?}, spread {:.3e}, witness links {links:?}, suite pass {}", rep.spread, rep.pass),
    )
}

fn criterion_5() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    let a3 = t3();
    let a2 = t2();
    let cases = [
        ("T3", cat(&a3, FourierSeries::zero().with_sin(&[1], 0.1)), TransverseDensity::lebesgue(&a3)),
        ("T2", sine(&a2), TransverseDensity::lebesgue(&a2)),
    ];
    for (name, phi, lam) in cases {
        let opts = opts_with_step(1e-3);
        let v = lambda_lefschetz(&phi, &lam, &opts).map_err(err)?.value;
        let rhs = trace_formula_rhs(&phi, &lam, &opts).map_err(err)?;
        ok &= (v - rhs).abs() <= 1e-6;
        details.push(format!("{name}: |rhs - value| = {:.3e}", (v - rhs).abs()));
    }
    check(ok, details.join(", "))
}

fn criterion_6() -> Outcome {
    let a = t2();
    let phi = FoliationMapSpec::from_family("shift", &a, MapFamily::Translation { offset: vec![0.0, 0.2] }).unwrap();
    let psi = FoliationMapSpec::from_family(
        "sine-then-shift",
        &a,
        MapFamily::Compose {
            maps: vec![
                MapFamily::LeafSine { amplitude: 0.05, shift: 0.0 },
                MapFamily::Translation { offset: vec![0.0, 0.2] },
            ],
        },
    )
    .unwrap();
    let rep = composite_identity_check(&phi, &psi, &TransverseDensity::lebesgue(&a), &LefschetzOptions::default())
        .map_err(err)?;
    check(
        rep.difference < 1e-5,
        format!("coin {:.3e}, lefschetz {:.3e}, difference {:.3e}", rep.coincidence, rep.lefschetz, rep.difference),
    )
}

fn criterion_7() -> Outcome {
    let a = Arc::new(FoliatedAtlas::suspension(CircleMap::rotation(0.3), AtlasOptions::default()).map_err(err)?);
    let flat = TransverseDensity::lebesgue(&a);
    let good = flat.check_holonomy_invariance(256, 1e-9);
    let wavy = TransverseDensity::new(
        &a,
        DensityFamily::Fourier {
            series: FourierSeries::constant(1.0).with_sin(&[1], 0.5),
        },
    )
    .map_err(err)?;
    let bad = wavy.check_holonomy_invariance(256, 1e-9);
    let at_zero = wavy.defect_at(&[0.0]).unwrap_or(0.0);
    check(
        good.pass && good.max_violation <= 1e-9 && !bad.pass && at_zero >= 0.4,
        format!(
            "h=1 max violation {:.3e}; h=1+0.5 sin: pass {}, violation at t=0 {at_zero:.4}",
            good.max_violation, bad.pass
        ),
    )
}

fn scaled_exactly(one: &LefschetzReport, two: &LefschetzReport) -> bool {
    let rel = |a: f64, b: f64| (b - 2.0 * a).abs() <= 1e-12 * (2.0 * a).abs().max(f64::MIN_POSITIVE);
    let sums = |r: &LefschetzReport| r.contributions.iter().fold(0.0, |s, c| s + c.contribution) == r.value;
    rel(one.value, two.value)
        && one.contributions.len() == two.contributions.len()
        && one
            .contributions
            .iter()
            .zip(&two.contributions)
            .all(|(c1, c2)| rel(c1.contribution, c2.contribution) && rel(c1.mass, c2.mass))
        && sums(one)
        && sums(two)
}

fn criterion_8() -> Outcome {
    let a3 = t3();
    let a2 = t2();
    let cases = [
        ("T3", cat(&a3, FourierSeries::zero().with_sin(&[1], 0.1)), TransverseDensity::lebesgue(&a3)),
        ("T2 sine", sine(&a2), TransverseDensity::lebesgue(&a2)),
        ("T2 degenerate", degenerate(&a2), TransverseDensity::lebesgue(&a2)),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, phi, lam) in cases {
        let opts = LefschetzOptions::default();
        let one = lambda_lefschetz(&phi, &lam, &opts).map_err(err)?;
        let two = lambda_lefschetz(&phi, &lam.scaled(2.0), &opts).map_err(err)?;
        let good = scaled_exactly(&one, &two);
        ok &= good;
        details.push(format!("{name}: {} -> {} ({})", one.value, two.value, if good { "exact" } else { "mismatch" }));
    }
    check(ok, details.join("; "))
}

fn criterion_9() -> Outcome {
    let a2 = t2();
    let a3 = t3();
    let susp = Arc::new(FoliatedAtlas::suspension(CircleMap::rotation(0.3), AtlasOptions::default()).map_err(err)?);
    let fam = |a: &Arc<FoliatedAtlas>, f: MapFamily| FoliationMapSpec::from_family("m", a, f).unwrap();
    let bump = perturbed_map(&sine(&a2), &draw_shifts(&a2, 7, 1, 0.01));
    let maps = vec![
        ("identity", fam(&a2, MapFamily::Identity)),
        ("translation", fam(&a3, MapFamily::Translation { offset: vec![0.1, 0.2, 0.3] })),
        ("leaf-affine", cat(&a3, FourierSeries::zero().with_sin(&[1], 0.1).with_cos(&[2], 0.05))),
        (
            "leaf-affine terms",
            fam(
                &a2,
                MapFamily::LeafAffine {
                    matrix: None,
                    offset: vec![FourierSeries::zero().with_cos(&[1], 0.1)],
                    leaf_terms: vec![FourierSeries::constant(0.05).with_cos(&[1], -0.05)],
                },
            ),
        ),
        ("leaf-sine", sine(&a2)),
        ("translation suspension", fam(&susp, MapFamily::Translation { offset: vec![0.25, 0.1] })),
        (
            "compose",
            fam(
                &a2,
                MapFamily::Compose {
                    maps: vec![
                        MapFamily::LeafSine { amplitude: 0.05, shift: 0.0 },
                        MapFamily::Translation { offset: vec![0.0, 0.2] },
                    ],
                },
            ),
        ),
        ("leaf bump shift", bump),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (name, m) in &maps {
        let n = m.source.n;
        for _ in 0..1000 {
            let x = AmbientPoint::new((0..n).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>());
            if !m.has_exact_jacobian(&x) {
                failures.push(format!("{name}: no exact Jacobian"));
                break;
            }
            let exact = m.ambient_jacobian(&x).map_err(err)?;
            let fd = m.fd_jacobian(&x).map_err(err)?;
            let d = (exact - fd).amax();
            worst = worst.max(d);
            if d > 1e-6 {
                failures.push(format!("{name}: {d:.3e}"));
                break;
            }
        }
    }
    check(
        failures.is_empty(),
        format!("{} families x 1000 points, max |exact - fd| {worst:.3e} {failures:?}", maps.len()),
    )
}

fn criterion_10() -> Outcome {
    let a3 = t3();
    let a2 = t2();
    let cases = [
        ("T3", cat(&a3, FourierSeries::zero().with_sin(&[1], 0.1)), TransverseDensity::lebesgue(&a3)),
        ("T2", sine(&a2), TransverseDensity::lebesgue(&a2)),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, phi, lam) in cases {
        let coarse = lambda_lefschetz(&phi, &lam, &opts_with_step(1e-3)).map_err(err)?.value;
        let fine = lambda_lefschetz(&phi, &lam, &opts_with_step(5e-4)).map_err(err)?.value;
        ok &= (coarse - fine).abs() < 1e-6;
        details.push(format!("{name}: |change| {:.3e}", (coarse - fine).abs()));
    }
    check(ok, details.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("T3 hyperbolic value and runtime", criterion_1),
        ("T2 sine value, components and runtime", criterion_2),
        ("degenerate scenario and seed spread", criterion_3),
        ("homotopy invariance suite", criterion_4),
        ("trace formula cross-check", criterion_5),
        ("composite identity", criterion_6),
        ("measure invariance on the suspension", criterion_7),
        ("scaling and additivity", criterion_8),
        ("Jacobian oracle", criterion_9),
        ("quadrature convergence", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d} [{secs:.1} s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
