use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use cvqkd_core::epr::Setting;
use cvqkd_core::protocol::{measure_error_rates, run_session, MeasuredRates, SessionTranscript, SiftCounts};
use cvqkd_core::security::{BoundsSummary, EveBound, SecurityReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::{Format, Scenario};
use crate::{BoundsFormat, BoundsSelector, CliError, RunArgs};

/// Eve's inference on the key slots, measured and from the attacked state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveSummary {
    /// rms of Alice's value minus Eve's estimate on X key slots.
    pub measured_x: f64,
    pub measured_p: f64,
    /// Standard errors of the two rms values, `rms / √(2n)`.
    pub standard_error_x: f64,
    pub standard_error_p: f64,
    pub analytic_x: f64,
    pub analytic_p: f64,
    pub slots_x: usize,
    pub slots_p: usize,
}

impl EveSummary {
    pub fn from_transcript(t: &SessionTranscript) -> Option<Self> {
        let eve = t.keys.eve.as_ref()?;
        let residual = |setting: Setting| {
            let (sq, n) = t
                .keys
                .settings
                .iter()
                .zip(t.keys.alice.values.iter().zip(&eve.values))
                .filter(|(s, _)| **s == setting)
                .fold((0.0, 0usize), |(sq, n), (_, (a, e))| (sq + (a - e).powi(2), n + 1));
            let rms = (sq / n as f64).sqrt();
            (rms, rms / (2.0 * n as f64).sqrt(), n)
        };
        let analytic = |setting: Setting| {
            t.eve_measurements
                .iter()
                .find(|m| m.target == setting)
                .map_or(f64::NAN, |m| m.residual_variance().sqrt())
        };
        let (measured_x, standard_error_x, slots_x) = residual(Setting::X);
        let (measured_p, standard_error_p, slots_p) = residual(Setting::P);
        Some(Self {
            measured_x,
            measured_p,
            standard_error_x,
            standard_error_p,
            analytic_x: analytic(Setting::X),
            analytic_p: analytic(Setting::P),
            slots_x,
            slots_p,
        })
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub counts: SiftCounts,
    pub security: SecurityReport,
    pub error_rates: MeasuredRates,
    pub eve: Option<EveSummary>,
}

impl Report {
    pub fn from_transcript(t: &SessionTranscript) -> Result<Self, CliError> {
        Ok(Self {
            seed: t.config.seed,
            counts: t.counts,
            security: SecurityReport::assess(&t.epr_stats)?,
            error_rates: measure_error_rates(t, &t.encryption_results.message)?,
            eve: EveSummary::from_transcript(t),
        })
    }
}

/// One row of `aggregate.csv`. `eve_bound` and `eve_measured` refer to
/// Eve's P inference, bounded by `1/Δ_inf x`; the `_x` columns are the
/// conjugate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub delta_inf_x: f64,
    pub delta_inf_p: f64,
    pub product: f64,
    pub eve_bound: f64,
    pub eve_measured: Option<f64>,
    pub bob_error_rate: f64,
    pub eve_error_rate: Option<f64>,
    pub eve_bound_x: f64,
    pub eve_measured_x: Option<f64>,
}

fn bound_value(b: EveBound) -> f64 {
    b.value().unwrap_or(f64::INFINITY)
}

impl SweepRow {
    pub fn new(parameter: f64, report: &Report) -> Self {
        let m = &report.security.measured;
        Self {
            parameter,
            delta_inf_x: m.delta_inf_x,
            delta_inf_p: m.delta_inf_p,
            product: m.product,
            eve_bound: bound_value(report.security.eve_bound_p),
            eve_measured: report.eve.map(|e| e.measured_p),
            bob_error_rate: report.error_rates.bob_error_rate,
            eve_error_rate: report.error_rates.eve_error_rate,
            eve_bound_x: bound_value(report.security.eve_bound_x),
            eve_measured_x: report.eve.map(|e| e.measured_x),
        }
    }
}

fn runtime(context: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", context.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| runtime(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), CliError> {
    let mut w = create(path)?;
    let result = if pretty {
        serde_json::to_writer_pretty(&mut w, value)
    } else {
        serde_json::to_writer(&mut w, value)
    };
    result.map_err(|e| runtime(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| runtime(path, e))
}

fn label<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn load(args: &RunArgs) -> Result<Scenario, CliError> {
    let mut scenario = Scenario::load(&args.scenario)?;
    scenario.apply_overrides(args.seed, args.slots, args.out.as_deref(), &args.format);
    scenario
        .validate()
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.scenario.display())))?;
    Ok(scenario)
}

fn summary_line(report: &Report) -> String {
    let m = &report.security.measured;
    let ci = m
        .confidence_interval
        .map_or(String::new(), |(lo, hi)| format!(" (95% CI {lo:.4}..{hi:.4})"));
    let eve = report
        .error_rates
        .eve_error_rate
        .map_or(String::new(), |r| format!(", eve error rate {r:.4}"));
    format!(
        "product {:.4}{ci}, verdict {}, bob error rate {:.4}{eve}",
        m.product,
        label(&report.security.verdict),
        report.error_rates.bob_error_rate
    )
}

/// Runs one session; writes `transcript.json` and `report.json` for the
/// json format and `record.csv` for csv.
pub fn simulate(args: &RunArgs, out: &mut impl Write) -> Result<(), CliError> {
    let scenario = load(args)?;
    let transcript = run_session(&scenario.session)?;
    let report = Report::from_transcript(&transcript)?;
    let dir = &scenario.output.directory;
    if scenario.wants(Format::Json) {
        write_json(&dir.join("transcript.json"), &transcript, false)?;
        write_json(&dir.join("report.json"), &report, true)?;
    }
    if scenario.wants(Format::Csv) {
        let path = dir.join("record.csv");
        let mut w = create(&path)?;
        transcript.record.write_csv(&mut w)?;
        w.flush().map_err(|e| runtime(&path, e))?;
    }
    let c = &report.counts;
    writeln!(
        out,
        "{} slots, {} sifted, {} in subensemble, {} key",
        c.n_slots, c.n_sifted, c.n_subensemble, c.n_key
    )
    .and_then(|_| writeln!(out, "{}", summary_line(&report)))
    .and_then(|_| writeln!(out, "outputs in {}", dir.display()))
    .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Runs every sweep point, in parallel, then writes
/// `point_NNN/report.json` (json) and `aggregate.csv` (csv) in order.
pub fn sweep(args: &RunArgs, out: &mut impl Write) -> Result<(), CliError> {
    let scenario = load(args)?;
    let spec = scenario.sweep.clone().ok_or_else(|| {
        CliError::Validation(format!("{}: scenario has no [sweep] table", args.scenario.display()))
    })?;
    let points = spec
        .values
        .iter()
        .map(|&v| scenario.with_parameter(&spec.parameter, v))
        .collect::<Result<Vec<_>, _>>()?;
    let reports = points
        .par_iter()
        .map(|p| run_session(&p.session).map_err(CliError::from).and_then(|t| Report::from_transcript(&t)))
        .collect::<Result<Vec<_>, _>>()?;

    let dir = &scenario.output.directory;
    let rows: Vec<SweepRow> = spec.values.iter().zip(&reports).map(|(&v, r)| SweepRow::new(v, r)).collect();
    if scenario.wants(Format::Json) {
        for (i, report) in reports.iter().enumerate() {
            write_json(&dir.join(format!("point_{i:03}")).join("report.json"), report, true)?;
        }
    }
    if scenario.wants(Format::Csv) {
        let path = dir.join("aggregate.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        for row in &rows {
            w.serialize(row).map_err(|e| runtime(&path, e))?;
        }
        w.flush().map_err(|e| runtime(&path, e))?;
    }
    let mut lines = vec![format!("sweep over {} ({} points)", spec.parameter, rows.len())];
    for (row, report) in rows.iter().zip(&reports) {
        lines.push(format!("{} = {}: {}", spec.parameter, row.parameter, summary_line(report)));
    }
    lines.push(format!("outputs in {}", dir.display()));
    lines
        .iter()
        .try_for_each(|l| writeln!(out, "{l}"))
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn bounds_summary(selector: &BoundsSelector) -> Result<BoundsSummary, CliError> {
    let result = match (selector.sigma, selector.delta, selector.dinf) {
        (Some(s), None, None) => BoundsSummary::for_sigma(s),
        (None, Some(d), None) => BoundsSummary::for_delta(d),
        (None, None, Some(v)) => BoundsSummary::for_inference_deviation(v),
        _ => return Err(CliError::Validation("give exactly one of --sigma, --delta, --dinf".into())),
    };
    result.map_err(|e| CliError::Validation(e.to_string()))
}

fn bound_text(b: EveBound) -> String {
    match b {
        EveBound::Finite(v) => format!("{v:.4}"),
        EveBound::Unbounded => "unbounded".into(),
    }
}

pub fn bounds(selector: &BoundsSelector, format: BoundsFormat, out: &mut impl Write) -> Result<(), CliError> {
    let s = bounds_summary(selector)?;
    let io = |e: std::io::Error| CliError::Runtime(e.to_string());
    match format {
        BoundsFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &s).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(out).map_err(io)
        }
        BoundsFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.serialize(s).map_err(|e| CliError::Runtime(e.to_string()))?;
            w.flush().map_err(io)
        }
        BoundsFormat::Text => {
            let mut lines = vec![
                format!("sigma                {:.6}", s.sigma),
                format!("regime               {}", label(&s.regime)),
                format!("hypothesis           {}", s.hypothesis.statement()),
            ];
            if let Some(d) = s.delta {
                lines.push(format!("delta                {d:.6}"));
            }
            lines.extend([
                format!(
                    "eve std bound        {} (rounded down: {})",
                    bound_text(s.eve_min_std),
                    bound_text(s.eve_min_std_conservative)
                ),
                format!("bob error rate       {:.4}", s.bob_error_rate),
                format!(
                    "eve error rate       {:.4} (unrounded bound: {:.4})",
                    s.eve_error_rate, s.eve_error_rate_exact
                ),
                format!("eve / bob            {:.1}", s.eve_to_bob_ratio),
            ]);
            if !s.demonstrative {
                lines.push("note: the bound does not exceed the vacuum level".into());
            }
            lines.iter().try_for_each(|l| writeln!(out, "{l}")).map_err(io)
        }
    }
}
