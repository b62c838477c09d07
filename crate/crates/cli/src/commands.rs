use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tomoplan::averaging::{average_oed_crb, average_oed_fisher, state_space_radius, RadiusMode};
use tomoplan::cholesky::{optimize_design_cholesky, theta_from_bloch};
use tomoplan::design_numeric::optimize_design_at_state;
use tomoplan::estimators::Method;
use tomoplan::io::{parse_spec, parse_state};
use tomoplan::montecarlo::{rms_improvement, run_trials, sphere_grid, CampaignSettings, CampaignSummary};
use tomoplan::odt::{odt_design, odt_settings, variance_matrix};
use tomoplan::repr::{validate_setup, RawSetup, ValidationReport};
use tomoplan::simplex::OptimizerSettings;
use tomoplan::{Design, ExperimentSetup, Solution, Warning};

use crate::args::{DesignArgs, DesignMethod, SimulateArgs, ValidateArgs};
use crate::manifest::{CommandRecord, RunManifest, CSV_MARKER};

/// Bad arguments or inputs; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_setup(manifest: &mut RunManifest, path: &Path) -> anyhow::Result<(RawSetup, ValidationReport)> {
    let text = manifest.read_input("spec", path)?;
    let raw = parse_spec(&text).with_context(|| format!("cannot parse spec {}", path.display()))?;
    let report = validate_setup(&raw);
    Ok((raw, report))
}

fn valid_setup(manifest: &mut RunManifest, path: &Path) -> anyhow::Result<ExperimentSetup> {
    let (raw, report) = load_setup(manifest, path)?;
    if !report.is_valid() {
        return usage(format!("invalid spec {}: {report}", path.display()));
    }
    Ok(ExperimentSetup::from_raw(&raw)?)
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    valid: bool,
    #[serde(flatten)]
    report: &'a ValidationReport,
    manifest: &'a RunManifest,
}

pub fn validate(args: ValidateArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new(CommandRecord::Validate(args.clone()));
    let (_, report) = load_setup(&mut manifest, &args.spec)?;
    write_json(
        args.out.as_deref(),
        &ValidateOutput {
            valid: report.is_valid(),
            report: &report,
            manifest: &manifest,
        },
    )?;
    if !report.is_valid() {
        return usage(format!("{} violation(s): {report}", report.violations.len()));
    }
    Ok(())
}

fn parse_radius(s: Option<&str>) -> anyhow::Result<RadiusMode> {
    Ok(match s.unwrap_or("min") {
        "min" => RadiusMode::Min,
        "max" => RadiusMode::Max,
        other => match other.parse::<f64>() {
            Ok(v) => RadiusMode::Value(v),
            Err(_) => return usage(format!("--radius must be min, max or a number, got '{other}'")),
        },
    })
}

#[derive(Serialize)]
struct Objective {
    kind: &'static str,
    value: f64,
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    iterations: usize,
    residual: f64,
    multiplier: Option<f64>,
    warnings: &'a [Warning],
}

#[derive(Serialize)]
struct DesignOutput<'a> {
    method: &'static str,
    labels: Vec<&'a str>,
    lambda: &'a [f64],
    objective: Objective,
    diagnostics: Diagnostics<'a>,
    manifest: &'a RunManifest,
}

fn objective_kind(method: DesignMethod) -> &'static str {
    match method {
        DesignMethod::Oed => "crb",
        DesignMethod::AvgOedFisher => "crb-of-averaged-fisher",
        DesignMethod::AvgOedCrb => "averaged-crb",
        DesignMethod::Odt => "crb-variance",
        DesignMethod::OedCholesky => "constrained-crb",
    }
}

fn with_minimality_hint(err: tomoplan::Error, method: DesignMethod) -> anyhow::Error {
    if matches!(err, tomoplan::Error::NotMinimal { .. }) {
        let hint = format!(
            "{} needs a minimal setup (exactly N²−1 independent outcomes); use avg-oed-fisher for other setups",
            method.name()
        );
        return anyhow::Error::new(err).context(hint);
    }
    err.into()
}

pub fn design(args: DesignArgs) -> anyhow::Result<()> {
    let method = args.method;
    if method.needs_state() && args.state.is_none() {
        return usage(format!("--method {} requires --state", method.name()));
    }
    if !method.needs_state() && args.state.is_some() {
        return usage(format!("--method {} averages over states; drop --state", method.name()));
    }
    if method.needs_state() && args.radius.is_some() {
        return usage(format!("--radius only applies to averaging methods, not {}", method.name()));
    }
    let mut manifest = RunManifest::new(CommandRecord::Design(args.clone()));
    let setup = valid_setup(&mut manifest, &args.spec)?;
    let settings = OptimizerSettings::default();
    let n = setup.dimension();

    let solution: Solution = if let Some(path) = &args.state {
        let text = manifest.read_input("state", path)?;
        let state = parse_state(&text, setup.basis()).with_context(|| format!("cannot parse state {}", path.display()))?;
        if !state.physical {
            return usage(format!("state {} is not a density matrix", path.display()));
        }
        match method {
            DesignMethod::Oed => optimize_design_at_state(&setup, &state.r, &settings)?,
            _ => optimize_design_cholesky(&setup, &theta_from_bloch(&state.r, setup.basis())?, &settings)?,
        }
    } else {
        let radius = state_space_radius(n, parse_radius(args.radius.as_deref())?)?;
        let result = match method {
            DesignMethod::AvgOedFisher => average_oed_fisher(&setup, &radius),
            DesignMethod::AvgOedCrb => average_oed_crb(&setup, &radius),
            _ => variance_matrix(&setup, &radius).and_then(|v| odt_design(&v, &odt_settings())),
        };
        result.map_err(|e| with_minimality_hint(e, method))?
    };

    let output = DesignOutput {
        method: method.name(),
        labels: setup.configs().iter().map(|c| c.label.as_str()).collect(),
        lambda: solution.weights(),
        objective: Objective {
            kind: objective_kind(method),
            value: solution.objective,
        },
        diagnostics: Diagnostics {
            iterations: solution.iterations,
            residual: solution.residual,
            multiplier: Some(solution.multiplier).filter(|m| m.is_finite()),
            warnings: &solution.warnings,
        },
        manifest: &manifest,
    };
    write_json(args.out.as_deref(), &output)
}

fn parse_grid(s: &str) -> anyhow::Result<(usize, usize, usize)> {
    let parts: Vec<usize> = match s.split(',').map(|x| x.trim().parse()).collect() {
        Ok(v) => v,
        Err(_) => return usage(format!("--grid expects three integers r,polar,azimuth, got '{s}'")),
    };
    match parts[..] {
        [r, p, a] => Ok((r, p, a)),
        _ => usage(format!("--grid expects three integers r,polar,azimuth, got '{s}'")),
    }
}

fn parse_estimators(s: &str) -> anyhow::Result<Vec<Method>> {
    let mut methods = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part.parse().map_err(|_| UsageError(format!("unknown estimator '{part}'")))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    Ok(methods)
}

fn parse_design(text: &str) -> anyhow::Result<Design> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let lambda = match &value {
        serde_json::Value::Array(_) => &value,
        _ => value.get("lambda").context("design file has no 'lambda' field")?,
    };
    let weights: Vec<f64> = serde_json::from_value(lambda.clone()).context("'lambda' must be an array of numbers")?;
    Ok(Design::new(weights)?)
}

#[derive(Serialize)]
struct Improvement {
    method: Method,
    percent: f64,
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    design: &'a [f64],
    summary: CampaignSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniform: Option<CampaignSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    improvement: Option<Vec<Improvement>>,
    manifest: &'a RunManifest,
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    if args.out.as_os_str().is_empty() {
        return usage("simulate requires --out <prefix>");
    }
    let (nr, np, na) = parse_grid(&args.grid)?;
    let methods = parse_estimators(&args.estimators)?;
    let mut manifest = RunManifest::new(CommandRecord::Simulate(args.clone()));
    let setup = valid_setup(&mut manifest, &args.spec)?;
    let design = match &args.design {
        Some(path) => {
            let text = manifest.read_input("design", path)?;
            parse_design(&text).with_context(|| format!("cannot read design {}", path.display()))?
        }
        None => Design::uniform(setup.num_configs()),
    };
    let settings = CampaignSettings {
        n_tot: args.ntot,
        runs: args.runs,
        methods,
        seed: args.seed,
        exact_statistics: false,
        theta_space: args.theta,
    };
    let grid = sphere_grid(nr, np, na)?;
    let result = run_trials(&setup, &design, &grid, &settings)?;
    let summary = result.summary();

    let (uniform, improvement) = if args.compare_uniform {
        let reference = run_trials(&setup, &Design::uniform(setup.num_configs()), &grid, &settings)?.summary();
        let improvement = settings
            .methods
            .iter()
            .filter_map(|&m| rms_improvement(&reference, &summary, m).map(|percent| Improvement { method: m, percent }))
            .collect();
        (Some(reference), Some(improvement))
    } else {
        (None, None)
    };

    let csv_path = with_extension(&args.out, "csv");
    let mut csv = BufWriter::new(File::create(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?);
    writeln!(csv, "{CSV_MARKER}{}", serde_json::to_string(&manifest)?)?;
    result.write_csv(&mut csv)?;
    csv.flush()?;

    for m in &summary.methods {
        eprintln!("{:>4}: mse {:.4e}  mse/crb {:.4}", m.method.short(), m.mse, m.ratio);
    }
    write_json(
        Some(&with_extension(&args.out, "json")),
        &SimulateOutput {
            design: design.weights(),
            summary,
            uniform,
            improvement,
            manifest: &manifest,
        },
    )
}
