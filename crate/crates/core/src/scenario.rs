//! Scenario files and the command runner behind the `leafwise` binary.
//!
//! A scenario is a JSON document with an `atlas` block, named `maps` with a
//! role (`phi` or `psi`), a `measure` block and an optional `run` block of
//! tolerances. Functions are given as truncated Fourier series.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coincidence::{find_components, CoincidenceComponent, DefectEvaluator, PointKind, SearchOptions};
use crate::error::Error;
use crate::geometry::{AtlasOptions, CircleMap, FoliatedAtlas};
use crate::homotopy::PerturbationSchedule;
use crate::lefschetz::{lambda_coincidence, lambda_lefschetz, trace_formula_rhs, verify_homotopy_invariance, LefschetzOptions};
use crate::maps::{FoliationMapSpec, MapFamily};
use crate::measure::{DensityFamily, TransverseDensity};
use crate::torus::AmbientPoint;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_VERIFICATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Locate and classify the fixed set of `phi`.
    Fix,
    /// Λ-coincidence number of `(phi, psi)`.
    Coin,
    /// Λ-Lefschetz number of `phi`.
    Lefschetz,
    /// Λ-number of every member of the invariance family.
    Invariance,
    /// Holonomy invariance of the measure.
    CheckMeasure,
    /// Direct integral over an already transverse fixed set.
    TraceRhs,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Fix => "fix",
            Command::Coin => "coin",
            Command::Lefschetz => "lefschetz",
            Command::Invariance => "invariance",
            Command::CheckMeasure => "check-measure",
            Command::TraceRhs => "trace-rhs",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AtlasBlock {
    LinearTorus {
        n: usize,
        leaf_axes: Vec<usize>,
        #[serde(default)]
        options: AtlasOptions,
        /// `-1` reverses the tangential orientation of every chart.
        #[serde(default)]
        leaf_orientation: Option<i8>,
    },
    Suspension {
        monodromy: CircleMap,
        #[serde(default)]
        options: AtlasOptions,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Phi,
    Psi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapBlock {
    pub name: String,
    pub role: Role,
    #[serde(flatten)]
    pub family: MapFamily,
}

/// Optional members for `invariance`; a missing entry keeps the base map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberBlock {
    #[serde(default)]
    pub phi: Option<MapFamily>,
    #[serde(default)]
    pub psi: Option<MapFamily>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceBlock {
    pub members: Vec<MemberBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_tol_rank")]
    pub tol_rank: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_radius")]
    pub start_radius: f64,
    #[serde(default)]
    pub out: Option<String>,
}

fn default_grid() -> usize {
    64
}
fn default_step() -> f64 {
    crate::coincidence::DEFAULT_STEP
}
fn default_tol_rank() -> f64 {
    crate::coincidence::TOL_RANK
}
fn default_max_attempts() -> usize {
    20
}
fn default_radius() -> f64 {
    1e-2
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            command: None,
            seed: 0,
            grid: default_grid(),
            step: default_step(),
            tol_rank: default_tol_rank(),
            max_attempts: default_max_attempts(),
            start_radius: default_radius(),
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub atlas: AtlasBlock,
    #[serde(default)]
    pub maps: Vec<MapBlock>,
    #[serde(default)]
    pub measure: Option<DensityFamily>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub invariance: Option<InvarianceBlock>,
}

/// Parse or validation failure, anchored at a line of the scenario text.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ScenarioError {}

/// Line of the first occurrence of `needle`, or line 1.
fn anchor(text: &str, needle: &str) -> (usize, usize) {
    text.lines()
        .enumerate()
        .find_map(|(i, l)| l.find(needle).map(|c| (i + 1, c + 1)))
        .unwrap_or((1, 1))
}

fn anchored(text: &str, needle: &str, message: impl Into<String>) -> ScenarioError {
    let (line, column) = anchor(text, needle);
    ScenarioError {
        line,
        column,
        message: message.into(),
    }
}

pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError {
        line: e.line().max(1),
        column: e.column().max(1),
        message: e.to_string(),
    })
}

/// Effective settings after command-line overrides.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub step: Option<f64>,
    pub tol_rank: Option<f64>,
    pub max_attempts: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A scenario resolved against its atlas: maps built, measure validated.
#[derive(Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub atlas: Arc<FoliatedAtlas>,
    pub phi: Option<FoliationMapSpec>,
    pub psi: Option<FoliationMapSpec>,
    pub measure: Option<TransverseDensity>,
    pub run: RunBlock,
}

impl Resolved {
    pub fn options(&self) -> LefschetzOptions {
        LefschetzOptions {
            search: SearchOptions {
                grid_per_axis: self.run.grid,
                step: self.run.step,
                tol_rank: self.run.tol_rank,
                ..SearchOptions::default()
            },
            schedule: PerturbationSchedule {
                start_radius: self.run.start_radius,
                max_attempts: self.run.max_attempts,
                ..PerturbationSchedule::default()
            },
            seed: self.run.seed,
            ..LefschetzOptions::default()
        }
    }
}

fn build_atlas(block: &AtlasBlock) -> crate::error::Result<FoliatedAtlas> {
    match block {
        AtlasBlock::LinearTorus {
            n,
            leaf_axes,
            options,
            leaf_orientation,
        } => {
            let atlas = FoliatedAtlas::linear_torus(*n, leaf_axes, options.clone())?;
            Ok(match leaf_orientation {
                Some(s) => atlas.with_leaf_orientation(*s),
                None => atlas,
            })
        }
        AtlasBlock::Suspension { monodromy, options } => FoliatedAtlas::suspension(monodromy.clone(), options.clone()),
    }
}

/// Checks names, roles, dimensions and the blocks `command` needs.
pub fn resolve(text: &str, command: Command, overrides: &Overrides) -> Result<Resolved, ScenarioError> {
    let scenario = parse(text)?;
    let atlas = Arc::new(build_atlas(&scenario.atlas).map_err(|e| anchored(text, "\"atlas\"", e.to_string()))?);
    let mut seen = std::collections::BTreeSet::new();
    for m in &scenario.maps {
        if !seen.insert(m.name.clone()) {
            return Err(anchored(text, &format!("\"{}\"", m.name), format!("duplicate map name `{}`", m.name)));
        }
    }
    let pick = |role: Role| -> Result<Option<FoliationMapSpec>, ScenarioError> {
        let blocks: Vec<&MapBlock> = scenario.maps.iter().filter(|m| m.role == role).collect();
        match blocks.as_slice() {
            [] => Ok(None),
            [m] => FoliationMapSpec::from_family(&m.name, &atlas, m.family.clone())
                .map(Some)
                .map_err(|e| anchored(text, &format!("\"{}\"", m.name), format!("map `{}`: {e}", m.name))),
            [_, second, ..] => Err(anchored(
                text,
                &format!("\"{}\"", second.name),
                format!("more than one map with role {role:?}"),
            )),
        }
    };
    let phi = pick(Role::Phi)?;
    let psi = pick(Role::Psi)?;
    let needs_phi = command != Command::CheckMeasure;
    if needs_phi && phi.is_none() {
        return Err(anchored(text, "\"maps\"", format!("command `{command}` needs a map with role \"phi\"")));
    }
    if command == Command::Coin && psi.is_none() {
        return Err(anchored(text, "\"maps\"", "command `coin` needs a map with role \"psi\""));
    }
    if matches!(command, Command::Fix | Command::Lefschetz | Command::TraceRhs) {
        let phi = phi.as_ref().expect("checked above");
        if !phi.leaf_preserving {
            return Err(anchored(
                text,
                &format!("\"{}\"", phi.name),
                format!("map `{}` is not leaf-preserving on this atlas", phi.name),
            ));
        }
    }
    let needs_measure = command != Command::Fix;
    let measure = match &scenario.measure {
        Some(fam) => Some(
            TransverseDensity::new(&atlas, fam.clone()).map_err(|e| anchored(text, "\"measure\"", format!("measure: {e}")))?,
        ),
        None if needs_measure => {
            return Err(anchored(text, "{", format!("command `{command}` needs a \"measure\" block")));
        }
        None => None,
    };
    if command == Command::Invariance && scenario.invariance.is_none() {
        return Err(anchored(text, "{", "command `invariance` needs an \"invariance\" block"));
    }
    if let Some(inv) = &scenario.invariance {
        for (k, m) in inv.members.iter().enumerate() {
            for fam in [&m.phi, &m.psi].into_iter().flatten() {
                fam.build(&atlas)
                    .map_err(|e| anchored(text, "\"invariance\"", format!("invariance member {k}: {e}")))?;
            }
        }
    }
    let mut run = scenario.run.clone();
    if let Some(v) = overrides.seed {
        run.seed = v;
    }
    if let Some(v) = overrides.grid {
        run.grid = v;
    }
    if let Some(v) = overrides.step {
        run.step = v;
    }
    if let Some(v) = overrides.tol_rank {
        run.tol_rank = v;
    }
    if let Some(v) = overrides.max_attempts {
        run.max_attempts = v;
    }
    if let Some(v) = &overrides.out {
        run.out = Some(v.to_string_lossy().into_owned());
    }
    if run.grid < 2 || !(run.step > 0.0) || !(run.tol_rank > 0.0) || run.max_attempts == 0 || !(run.start_radius >= 0.0) {
        return Err(anchored(
            text,
            "\"run\"",
            "run block: need grid >= 2, step > 0, tol_rank > 0, max_attempts >= 1, start_radius >= 0",
        ));
    }
    Ok(Resolved {
        scenario,
        atlas,
        phi,
        psi,
        measure,
        run,
    })
}

/// What a run produced.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub message: String,
    pub report: Option<PathBuf>,
    pub components: Option<PathBuf>,
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::MeasureNotInvariant(_)
        | Error::HypothesisViolated(_)
        | Error::Incompatible { .. }
        | Error::NotPlaquewiseClose(_)
        | Error::NotInvertible(_) => EXIT_VERIFICATION,
        Error::BadSplit(_)
        | Error::MonodromyNotInvertible(_)
        | Error::Dimension(_)
        | Error::InvalidParameter(_)
        | Error::UnsupportedCodimension(_) => EXIT_INVALID,
        _ => EXIT_NUMERICAL,
    }
}

fn status_name(code: i32) -> &'static str {
    match code {
        EXIT_OK => "ok",
        EXIT_INVALID => "invalid",
        EXIT_VERIFICATION => "verification-failed",
        _ => "numerical-failure",
    }
}

fn component_rows(components: &[CoincidenceComponent]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for c in components {
        for (k, (p, cls)) in c.points.iter().zip(&c.classifications).enumerate() {
            let mut row = vec![c.id.to_string(), k.to_string()];
            row.extend(p.coords().iter().map(|v| format!("{v:.15e}")));
            row.push(cls.sign.unwrap_or(0).to_string());
            row.push(
                match cls.kind {
                    PointKind::LeafwiseSimple => "leafwise-simple",
                    PointKind::LsTransverseOnly => "ls-transverse",
                    PointKind::Degenerate => "degenerate",
                }
                .to_string(),
            );
            row.push(c.closed.to_string());
            rows.push(row);
        }
    }
    rows
}

/// Writes the per-point component table; header only when there are no
/// components.
pub fn write_components_csv(path: &Path, n: usize, components: &[CoincidenceComponent]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["component".to_string(), "point".to_string()];
    header.extend((0..n).map(|a| format!("x{a}")));
    header.extend(["sign", "kind", "closed"].map(String::from));
    w.write_record(&header)?;
    for row in component_rows(components) {
        w.write_record(&row)?;
    }
    w.flush()
}

fn components_summary(components: &[CoincidenceComponent]) -> Value {
    Value::Array(
        components
            .iter()
            .map(|c| {
                let count = |k: PointKind| c.classifications.iter().filter(|x| x.kind == k).count();
                json!({
                    "id": c.id,
                    "points": c.points.len(),
                    "closed": c.closed,
                    "degenerate": c.degenerate,
                    "sign": c.sign,
                    "sign_changes": c.sign_changes,
                    "arclength": c.arclength,
                    "start": c.points.first().map(|p| p.coords().to_vec()),
                    "leafwise_simple_points": count(PointKind::LeafwiseSimple),
                    "ls_transverse_points": count(PointKind::LsTransverseOnly),
                    "degenerate_points": count(PointKind::Degenerate),
                })
            })
            .collect(),
    )
}

type CommandResult = crate::error::Result<(i32, Value, Vec<CoincidenceComponent>)>;

fn execute(command: Command, r: &Resolved) -> CommandResult {
    let opts = r.options();
    let measure = || r.measure.as_ref().expect("validated");
    let phi = || r.phi.as_ref().expect("validated");
    match command {
        Command::Fix => {
            let id = FoliationMapSpec::identity(&r.atlas);
            let search = find_components(&DefectEvaluator::new(&id, phi())?, &opts.search)?;
            let value = json!({
                "components": components_summary(&search.components),
                "ls_transverse": search.is_ls_transverse(),
                "leafwise_simple": search.is_leafwise_simple(),
                "seeds": search.seeds,
                "converged_seeds": search.converged,
                "warnings": search.warnings,
            });
            Ok((EXIT_OK, value, search.components))
        }
        Command::Coin | Command::Lefschetz => {
            let rep = if command == Command::Coin {
                lambda_coincidence(phi(), r.psi.as_ref().expect("validated"), measure(), &opts)?
            } else {
                lambda_lefschetz(phi(), measure(), &opts)?
            };
            let value = json!({
                "value": rep.value,
                "perturbed": rep.perturbed,
                "contributions": rep.contributions,
                "components": components_summary(&rep.components),
                "certificate": rep.certificate,
                "measure_invariance": rep.measure,
                "warnings": rep.warnings,
            });
            Ok((EXIT_OK, value, rep.components))
        }
        Command::TraceRhs => {
            let value = trace_formula_rhs(phi(), measure(), &opts)?;
            Ok((EXIT_OK, json!({ "value": value }), Vec::new()))
        }
        Command::CheckMeasure => {
            let rep = measure().check_holonomy_invariance(opts.measure_samples, opts.measure_tol);
            let probes: Vec<Value> = (0..8)
                .filter_map(|k| {
                    let t = k as f64 / 8.0;
                    measure().defect_at(&[t]).map(|v| json!({ "t": t, "violation": v }))
                })
                .collect();
            let code = if rep.pass { EXIT_OK } else { EXIT_VERIFICATION };
            Ok((code, json!({ "invariance": rep, "probes": probes }), Vec::new()))
        }
        Command::Invariance => {
            let base_phi;
            let base_psi;
            let lefschetz_mode = r.psi.is_none();
            if lefschetz_mode {
                base_phi = FoliationMapSpec::identity(&r.atlas);
                base_psi = phi().clone();
            } else {
                base_phi = phi().clone();
                base_psi = r.psi.clone().expect("checked");
            }
            let block = r.scenario.invariance.as_ref().expect("validated");
            let mut family = Vec::new();
            for (k, m) in block.members.iter().enumerate() {
                let build = |fam: &Option<MapFamily>, base: &FoliationMapSpec| -> crate::error::Result<FoliationMapSpec> {
                    match fam {
                        Some(f) => FoliationMapSpec::from_family(&format!("member{k}"), &r.atlas, f.clone()),
                        None => Ok(base.clone()),
                    }
                };
                if lefschetz_mode {
                    let member = build(&m.phi, &base_psi)?;
                    family.push((base_phi.clone(), member));
                } else {
                    family.push((build(&m.phi, &base_phi)?, build(&m.psi, &base_psi)?));
                }
            }
            let rep = verify_homotopy_invariance((&base_phi, &base_psi), &family, measure(), &opts)?;
            let code = if rep.pass { EXIT_OK } else { EXIT_VERIFICATION };
            Ok((code, serde_json::to_value(&rep).expect("report serializes"), Vec::new()))
        }
    }
}

fn provenance(r: &Resolved, command: Command) -> Value {
    let opts = r.options();
    let run = RunBlock {
        out: None,
        ..r.run.clone()
    };
    json!({
        "command": command,
        "run": run,
        "search": opts.search,
        "schedule": opts.schedule,
        "measure_samples": opts.measure_samples,
        "measure_tol": opts.measure_tol,
        "assignment": opts.assignment,
        "atlas": r.scenario.atlas,
        "charts": r.atlas.charts.len(),
        "transitions": r.atlas.transitions.len(),
    })
}

/// Runs `command` on the scenario at `path`, writing `report.json` and
/// `components.csv` into the output directory.
pub fn run(command: Command, path: &Path, overrides: &Overrides) -> Outcome {
    let fail = |code: i32, message: String| Outcome {
        exit_code: code,
        message,
        report: None,
        components: None,
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_INVALID, format!("{}: {e}", path.display())),
    };
    let resolved = match resolve(&text, command, overrides) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_INVALID, format!("{}: {e}", path.display())),
    };
    let out_dir = resolved
        .run
        .out
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("leafwise-out"));
    if let Err(e) = fs::create_dir_all(&out_dir) {
        return fail(EXIT_INVALID, format!("{}: {e}", out_dir.display()));
    }
    let (code, result, components, message) = match execute(command, &resolved) {
        Ok((code, value, comps)) => {
            let msg = match value.get("value") {
                Some(v) => format!("{command}: value {v}"),
                None => format!("{command}: {}", status_name(code)),
            };
            (code, value, comps, msg)
        }
        Err(e) => {
            let code = exit_code_for(&e);
            let detail = match &e {
                Error::TransversalityNotAchieved(cert) => serde_json::to_value(cert.as_ref()).expect("certificate serializes"),
                _ => Value::Null,
            };
            (code, json!({ "error": e.to_string(), "detail": detail }), Vec::new(), format!("{command}: {e}"))
        }
    };
    let report = json!({
        "tool": "leafwise",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": resolved.scenario.name,
        "status": status_name(code),
        "exit_code": code,
        "provenance": provenance(&resolved, command),
        "result": result,
        "components_csv": "components.csv",
    });
    let report_path = out_dir.join("report.json");
    let csv_path = out_dir.join("components.csv");
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Err(e) = fs::write(&report_path, text) {
        return fail(EXIT_INVALID, format!("{}: {e}", report_path.display()));
    }
    if let Err(e) = write_components_csv(&csv_path, resolved.atlas.n, &components) {
        return fail(EXIT_INVALID, format!("{}: {e}", csv_path.display()));
    }
    Outcome {
        exit_code: code,
        message,
        report: Some(report_path),
        components: Some(csv_path),
    }
}

/// Evaluates a map of a resolved scenario, for scripting and tests.
pub fn eval_role(r: &Resolved, role: Role, x: &[f64]) -> Option<Vec<f64>> {
    let map = match role {
        Role::Phi => r.phi.as_ref()?,
        Role::Psi => r.psi.as_ref()?,
    };
    Some(map.eval(&AmbientPoint::new(x.to_vec())).into_coords())
}
