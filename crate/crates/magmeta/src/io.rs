//! File formats: study-data CSV ingestion, results CSV persistence, the
//! analysis report, SVG panel plots, run manifests, and the simulation
//! config file.
//!
//! All numeric output is serialized with 17 significant digits so values
//! survive a write/read round trip bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::effects::{derive_effect, EffectRecord, IntervalEstimate, StudySummary};
use crate::magnitude::{
    ce_delta2, ce_profile_ci, ce_test, conditional_profile_ci, conditional_test,
    corrected_ci_delta2, naive_ci_delta2, rem_point_estimate, MagnitudeEstimate, Reference,
    TestResult,
};
use crate::pooling::{pool_delta, tau2_kdb, tau2_mp, tau2_ssc, Crit, PooledDelta, Tau2Estimate};
use crate::simulation::{mix_seed, MethodTag, ScenarioConfig, SummaryRow};
use crate::{Error, Result};

const RAW_HEADER: [&str; 7] = ["study_id", "n_t", "n_c", "mean_t", "mean_c", "sd_t", "sd_c"];
const D_HEADER: [&str; 4] = ["study_id", "n_t", "n_c", "d"];

/// One parsed input study: its identifier and the summary to derive from.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    pub summary: StudySummary,
}

fn parse_field<T: std::str::FromStr>(raw: &str, row: usize, column: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::data(format!("row {row}, column {column}: cannot parse {raw:?}")))
}

/// Reads study data from one of the two accepted CSV layouts:
/// `study_id,n_t,n_c,mean_t,mean_c,sd_t,sd_c` (raw summaries) or
/// `study_id,n_t,n_c,d` (precomputed effect). Mixed layouts are rejected;
/// errors name the offending row and column.
pub fn read_studies_csv(path: &Path) -> Result<Vec<Study>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let raw_form = if header == RAW_HEADER {
        true
    } else if header == D_HEADER {
        false
    } else {
        return Err(Error::data(format!(
            "unrecognized header {:?}; expected {:?} or {:?}",
            header.join(","),
            RAW_HEADER.join(","),
            D_HEADER.join(",")
        )));
    };

    let mut studies = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based file line: header occupies line 1
        let record = record?;
        let expected = if raw_form { 7 } else { 4 };
        if record.len() != expected {
            return Err(Error::data(format!(
                "row {row}: expected {expected} fields, found {}",
                record.len()
            )));
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::data(format!("row {row}, column study_id: empty")));
        }
        let n_t: u64 = parse_field(&record[1], row, "n_t")?;
        let n_c: u64 = parse_field(&record[2], row, "n_c")?;
        if n_t + n_c < 4 {
            return Err(Error::data(format!(
                "row {row}: total sample size {} is below 4",
                n_t + n_c
            )));
        }
        let summary = if raw_form {
            StudySummary::Raw {
                n_t,
                n_c,
                mean_t: parse_field(&record[3], row, "mean_t")?,
                mean_c: parse_field(&record[4], row, "mean_c")?,
                sd_t: parse_field(&record[5], row, "sd_t")?,
                sd_c: parse_field(&record[6], row, "sd_c")?,
            }
        } else {
            StudySummary::Precomputed {
                d: parse_field(&record[3], row, "d")?,
                n_t,
                n_c,
            }
        };
        studies.push(Study { id, summary });
    }
    if studies.is_empty() {
        return Err(Error::data("no studies"));
    }
    Ok(studies)
}

/// Derives effect records from parsed studies, mapping derivation problems
/// to data errors that name the study.
pub fn derive_studies(studies: &[Study]) -> Result<Vec<EffectRecord>> {
    studies
        .iter()
        .map(|s| derive_effect(s.summary).map_err(|e| Error::data(format!("study {}: {e}", s.id))))
        .collect()
}

// 17 significant digits: enough to reproduce any f64 exactly on read-back.
fn format_g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub const RESULTS_HEADER: &str =
    "scenario_id,k,n_pattern,f,delta,tau2,method,metric,value,mc_se,reps";

/// Writes summary rows with the fixed schema header.
pub fn write_results_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(RESULTS_HEADER.split(','))?;
    for row in rows {
        writer.write_record([
            row.scenario_id.as_str(),
            &row.k.to_string(),
            &row.n_pattern,
            &format_g17(row.f),
            &format_g17(row.delta),
            &format_g17(row.tau2),
            &row.method,
            &row.metric,
            &format_g17(row.value),
            &format_g17(row.mc_se),
            &row.reps.to_string(),
        ])?;
    }
    writer.flush().map_err(Error::from)?;
    Ok(())
}

/// Reads rows written by `write_results_csv`.
pub fn read_results_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// Everything the analysis computes for one heterogeneity method.
#[derive(Debug, Clone)]
pub struct MethodSection {
    pub tau2: Tau2Estimate,
    pub pooled: PooledDelta,
    pub signed_ci: IntervalEstimate,
    pub naive: IntervalEstimate,
    pub corrected: IntervalEstimate,
    pub rem: MagnitudeEstimate,
    pub conditional_test: TestResult,
    pub conditional_ci: IntervalEstimate,
}

/// Full magnitude meta-analysis of one study set.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub k: usize,
    pub alpha: f64,
    pub ce_estimate: f64,
    pub ce_test: TestResult,
    pub ce_ci: IntervalEstimate,
    pub sections: Vec<MethodSection>,
}

/// Runs the full analysis: the common-effect estimate, test, and profile
/// interval, then per method the heterogeneity estimate, pooled signed
/// effect with t interval, naive and corrected squared intervals, the
/// random-effects point estimate, and the conditional test and interval.
/// `bootstrap_b` >= 1000 switches the tests to the bootstrap reference.
pub fn analyze_effects<R: Rng + ?Sized>(
    effects: &[EffectRecord],
    methods: &[MethodTag],
    alpha: f64,
    bootstrap_b: u64,
    rng: &mut R,
) -> Result<AnalysisReport> {
    if effects.len() < 2 {
        return Err(Error::data(
            "analysis needs at least 2 studies; use the single-study interval instead",
        ));
    }
    if methods.is_empty() {
        return Err(Error::domain("at least one tau2 method must be enabled"));
    }
    let reference = if bootstrap_b >= 1000 {
        Reference::BootstrapSumF
    } else {
        Reference::Chi2K
    };
    let ce_estimate = ce_delta2(effects)?;
    let ce = ce_test(effects, reference, bootstrap_b, rng)?;
    let ce_ci = ce_profile_ci(effects, alpha)?;

    let mut sections = Vec::with_capacity(methods.len());
    for &tag in methods {
        let tau2 = match tag {
            MethodTag::Mp => tau2_mp(effects)?,
            MethodTag::Ssc => tau2_ssc(effects)?,
            MethodTag::Kdb => tau2_kdb(effects)?,
        };
        let (pooled, signed_ci) = pool_delta(effects, &tau2, Crit::StudentT, alpha)?;
        let naive = naive_ci_delta2(&signed_ci);
        let corrected = corrected_ci_delta2(&pooled, alpha, Crit::StudentT)?;
        let rem = rem_point_estimate(effects, &tau2)?;
        let cond_test = conditional_test(effects, &tau2, reference, bootstrap_b, rng)?;
        let conditional_ci = conditional_profile_ci(effects, &tau2, alpha)?;
        sections.push(MethodSection {
            tau2,
            pooled,
            signed_ci,
            naive,
            corrected,
            rem,
            conditional_test: cond_test,
            conditional_ci,
        });
    }
    Ok(AnalysisReport {
        k: effects.len(),
        alpha,
        ce_estimate,
        ce_test: ce,
        ce_ci,
        sections,
    })
}

fn push_interval(out: &mut String, name: &str, ci: &IntervalEstimate) {
    let _ = writeln!(
        out,
        "- {name}: [{:.6}, {:.6}] ({:.0}%, {})",
        ci.lower,
        ci.upper,
        ci.level * 100.0,
        ci.method
    );
}

/// Renders the analysis as markdown, one section per method.
pub fn render_report(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Magnitude meta-analysis");
    let _ = writeln!(out);
    let _ = writeln!(out, "{} studies, alpha = {}.", report.k, report.alpha);
    let _ = writeln!(out);
    let _ = writeln!(out, "## Common effect");
    let _ = writeln!(out);
    let _ = writeln!(out, "- delta^2 estimate: {:.6}", report.ce_estimate);
    let _ = writeln!(
        out,
        "- zero-effect test: statistic {:.6}, p = {:.6} ({}), {}",
        report.ce_test.statistic,
        report.ce_test.p_value,
        report.ce_test.reference,
        if report.ce_test.reject_at_05 {
            "rejected at 5%"
        } else {
            "not rejected at 5%"
        }
    );
    push_interval(&mut out, "delta^2 profile interval", &report.ce_ci);
    for section in &report.sections {
        let _ = writeln!(out);
        let _ = writeln!(out, "## Method: {}", section.pooled.method);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "- tau^2 estimate: {:.6}{}",
            section.tau2.value,
            if section.tau2.truncated {
                " (truncated at zero)"
            } else {
                ""
            }
        );
        let _ = writeln!(
            out,
            "- pooled delta: {:.6} (se {:.6})",
            section.pooled.estimate, section.pooled.std_err
        );
        push_interval(&mut out, "signed delta interval", &section.signed_ci);
        push_interval(&mut out, "delta^2 naive interval", &section.naive);
        push_interval(&mut out, "delta^2 corrected interval", &section.corrected);
        let _ = writeln!(
            out,
            "- delta^2 point estimate: {:.6} (truncated {:.6})",
            section.rem.delta2, section.rem.delta2_truncated
        );
        let _ = writeln!(
            out,
            "- conditional test: statistic {:.6}, p = {:.6} ({}), {}",
            section.conditional_test.statistic,
            section.conditional_test.p_value,
            section.conditional_test.reference,
            if section.conditional_test.reject_at_05 {
                "rejected at 5%"
            } else {
                "not rejected at 5%"
            }
        );
        push_interval(
            &mut out,
            "delta^2 conditional interval",
            &section.conditional_ci,
        );
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn method_color(method: &str) -> &'static str {
    match method {
        "mp" => "#1f77b4",
        "ssc" => "#d62728",
        "kdb" => "#2ca02c",
        "ce" => "#9467bd",
        _ => "#7f7f7f",
    }
}

/// Renders line plots of one metric against tau^2, one panel per (K, size
/// pattern) facet and one polyline per method.
pub fn render_svg(rows: &[SummaryRow], metric: &str) -> String {
    const PANEL_W: f64 = 260.0;
    const PANEL_H: f64 = 200.0;
    const MARGIN: f64 = 48.0;
    const GAP: f64 = 24.0;

    let rows: Vec<&SummaryRow> = rows.iter().filter(|r| r.metric == metric).collect();
    let mut facets: Vec<(usize, String)> = Vec::new();
    for row in &rows {
        let key = (row.k, row.n_pattern.clone());
        if !facets.contains(&key) {
            facets.push(key);
        }
    }
    let cols = facets.len().clamp(1, 4);
    let facet_rows = facets.len().div_ceil(cols).max(1);
    let width = MARGIN * 2.0 + cols as f64 * PANEL_W + (cols.saturating_sub(1)) as f64 * GAP;
    let height =
        MARGIN * 2.0 + facet_rows as f64 * PANEL_H + (facet_rows.saturating_sub(1)) as f64 * GAP;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" font-weight=\"bold\">{} vs tau^2</text>",
        xml_escape(metric)
    );

    for (i, (k, pattern)) in facets.iter().enumerate() {
        let x0 = MARGIN + (i % cols) as f64 * (PANEL_W + GAP);
        let y0 = MARGIN + (i / cols) as f64 * (PANEL_H + GAP);
        let points: Vec<&&SummaryRow> = rows
            .iter()
            .filter(|r| r.k == *k && r.n_pattern == *pattern)
            .collect();
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &points {
            x_min = x_min.min(p.tau2);
            x_max = x_max.max(p.tau2);
            y_min = y_min.min(p.value);
            y_max = y_max.max(p.value);
        }
        if !x_min.is_finite() || x_max == x_min {
            x_max = x_min + 1.0;
        }
        if !y_min.is_finite() {
            y_min = 0.0;
            y_max = 1.0;
        } else if y_max == y_min {
            y_max = y_min + 1.0;
        }
        let pad = (y_max - y_min) * 0.08;
        let (y_lo, y_hi) = (y_min - pad, y_max + pad);
        let sx = |t: f64| x0 + (t - x_min) / (x_max - x_min) * PANEL_W;
        let sy = |v: f64| y0 + PANEL_H - (v - y_lo) / (y_hi - y_lo) * PANEL_H;

        let _ = writeln!(
            out,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#999\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">K={k}, n={}</text>",
            x0 + 4.0,
            y0 - 6.0,
            xml_escape(pattern)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
            x0 - 4.0,
            sy(y_max),
            y_max
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
            x0 - 4.0,
            sy(y_min),
            y_min
        );

        let mut methods: Vec<&str> = Vec::new();
        for p in &points {
            if !methods.contains(&p.method.as_str()) {
                methods.push(&p.method);
            }
        }
        for method in methods {
            let mut series: Vec<(f64, f64)> = points
                .iter()
                .filter(|p| p.method == method)
                .map(|p| (p.tau2, p.value))
                .collect();
            series.sort_by(|a, b| a.0.total_cmp(&b.0));
            let coords: Vec<String> = series
                .iter()
                .map(|(t, v)| format!("{:.2},{:.2}", sx(*t), sy(*v)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"><title>{}</title></polyline>",
                method_color(method),
                coords.join(" "),
                xml_escape(method)
            );
        }
    }
    let _ = writeln!(out, "</svg>");
    out
}

/// Provenance record written alongside every output file; holds everything
/// needed to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub input_path: Option<String>,
    pub output_paths: Vec<String>,
    pub seed: Option<u64>,
    pub timestamp: String,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: None,
            input_path: None,
            output_paths: Vec::new(),
            seed: None,
            timestamp: chrono::Utc::now().to_rfc3339(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Manifest location for an output: the output path with `.manifest.json`
/// appended, so the pairing survives any file name.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn write_manifest(manifest: &RunManifest, output: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::data(format!("manifest serialization: {e}")))?;
    fs::write(manifest_path_for(output), body + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let body = fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| Error::data(format!("manifest parse: {e}")))
}

/// Simulation config file: global defaults plus explicit scenario cells.
/// Unknown keys are hard errors so typos cannot silently change a run.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFileConfig {
    pub reps: Option<u32>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<MethodTag>>,
    pub bootstrap_b: Option<u64>,
    #[serde(default)]
    pub scenario: Vec<ScenarioSpec>,
}

/// One scenario cell in a config file. Exactly one of `n` (equal sizes) or
/// `sizes` must be given.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub k: usize,
    pub n: Option<u64>,
    pub sizes: Option<Vec<u64>>,
    #[serde(default = "default_fraction")]
    pub f: f64,
    pub delta: f64,
    pub tau2: f64,
}

fn default_fraction() -> f64 {
    0.5
}

pub fn load_simulate_config(path: &Path) -> Result<SimulateFileConfig> {
    let body = fs::read_to_string(path)?;
    toml::from_str(&body).map_err(|e| Error::data(format!("config parse: {e}")))
}

/// Expands a config file into scenario cells, deriving each scenario seed
/// from the base seed and the cell index. Command-line values win over the
/// file's globals, which win over `default_reps`/`default_seed`.
pub fn expand_config(
    config: &SimulateFileConfig,
    reps_override: Option<u32>,
    seed_override: Option<u64>,
    default_reps: u32,
    default_seed: u64,
) -> Result<Vec<ScenarioConfig>> {
    if config.scenario.is_empty() {
        return Err(Error::data("config defines no scenarios"));
    }
    let reps = reps_override.or(config.reps).unwrap_or(default_reps);
    let seed = seed_override.or(config.seed).unwrap_or(default_seed);
    let methods = config
        .methods
        .clone()
        .unwrap_or_else(|| vec![MethodTag::Mp, MethodTag::Ssc]);
    let bootstrap_b = config.bootstrap_b.unwrap_or(0);
    config
        .scenario
        .iter()
        .enumerate()
        .map(|(idx, spec)| {
            let sizes = match (&spec.sizes, spec.n) {
                (Some(sizes), None) => sizes.clone(),
                (None, Some(n)) => vec![n; spec.k],
                _ => {
                    return Err(Error::data(format!(
                        "scenario {}: give exactly one of n or sizes",
                        idx + 1
                    )))
                }
            };
            let cell = ScenarioConfig {
                k: spec.k,
                sizes,
                f: spec.f,
                delta: spec.delta,
                tau2: spec.tau2,
                reps,
                seed: mix_seed(seed, idx as u64),
                methods: methods.clone(),
                bootstrap_b,
            };
            cell.validate()
                .map_err(|e| Error::data(format!("scenario {}: {e}", idx + 1)))?;
            Ok(cell)
        })
        .collect()
}
