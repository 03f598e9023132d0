use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::run::WaveAnalysis;
use super::{PipelineError, Settings};
use crate::effects::{decimal_difference, DidEstimate};
use crate::psmatch::{BalanceReport, MatchedSample};
use crate::stats::{stars, two_sided_p};

/// Name of the marker file written next to partial outputs.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFile {
    pub name: String,
    pub contents: String,
}

impl ReportFile {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        ReportFile {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

/// Files produced by a run, in stage order, and the error that stopped it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<ReportFile>,
    pub error: Option<PipelineError>,
}

impl RunOutcome {
    pub fn push(&mut self, file: ReportFile) {
        self.files.push(file);
    }

    pub fn extend(&mut self, files: impl IntoIterator<Item = ReportFile>) {
        self.files.extend(files);
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.contents.as_str())
    }

    /// Writes the bundle into `dir`, creating it when needed. A failed run
    /// that produced files also gets an [`INCOMPLETE_MARKER`] file naming the
    /// failed stage; a failed run with no files writes nothing at all.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        if self.files.is_empty() {
            return Ok(());
        }
        fs::create_dir_all(dir)?;
        for f in &self.files {
            fs::write(dir.join(&f.name), &f.contents)?;
        }
        let marker = dir.join(INCOMPLETE_MARKER);
        match &self.error {
            Some(e) => {
                let listed: String = self.files.iter().map(|f| format!("  {}\n", f.name)).collect();
                fs::write(
                    marker,
                    format!(
                        "run stopped at the {} stage: {}\ncomplete outputs:\n{listed}",
                        e.stage, e.message
                    ),
                )?;
            }
            None if marker.exists() => fs::remove_file(marker)?,
            None => {}
        }
        Ok(())
    }
}

const LABEL_WIDTH: usize = 26;
const COL_WIDTH: usize = 16;

fn line(out: &mut String, label: &str, cells: &[String]) {
    let _ = write!(out, "{label:<LABEL_WIDTH$}");
    for c in cells {
        let _ = write!(out, "{c:>COL_WIDTH$}");
    }
    out.push('\n');
}

fn starred(value: f64, p: f64) -> String {
    format!("{value:.3}{}", stars(p))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

/// Human-readable report: matched ATT per wave, their difference, support
/// counts and balance statistics, followed by the weighting estimators.
pub fn render_summary(settings: &Settings, waves: &[WaveAnalysis], did: Option<&DidEstimate>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Outcome: {}", settings.outcome.label());
    let _ = writeln!(out, "Propensity model: {} on {} covariates", settings.link.as_str(), settings.design.covariates().len());
    if !settings.subgroups.is_empty() {
        let preds: Vec<String> = settings.subgroups.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "Subgroup: {}", preds.join(" & "));
    }
    out.push('\n');
    let headers: Vec<String> = waves
        .iter()
        .map(|w| match w.wave {
            crate::tabular::Wave::Pre => "Pre Treatment".to_string(),
            crate::tabular::Wave::Post => "Post Treatment".to_string(),
        })
        .collect();
    line(&mut out, "", &headers);

    let per_wave = |f: &dyn Fn(&WaveAnalysis) -> String| -> Vec<String> { waves.iter().map(f).collect() };
    if waves.iter().all(|w| w.att.is_some()) {
        let att = |w: &WaveAnalysis| w.att.clone().expect("att");
        line(&mut out, "ATT (Treatment Group)", &per_wave(&|w| format!("{:.3}", att(w).treated_mean)));
        line(&mut out, "ATT (Control Group)", &per_wave(&|w| format!("{:.3}", att(w).control_mean)));
        line(&mut out, "Difference in ATT", &per_wave(&|w| starred(att(w).att, att(w).p_value)));
        line(&mut out, "Standard Error", &per_wave(&|w| format!("{:.3}", att(w).se)));
        line(&mut out, "t-stat", &per_wave(&|w| format!("{:.2}", att(w).t_stat)));
        if let Some(d) = did {
            line(&mut out, "Treatment Effect", &[starred(d.effect, d.p_value)]);
            line(&mut out, "Standard Error", &[format!("{:.3}", d.se)]);
            line(&mut out, "t-stat", &[format!("{:.2}", d.t_stat)]);
        }
    }
    if waves.iter().all(|w| w.matched.is_some()) {
        let count = |f: fn(&MatchedSample) -> usize| per_wave(&|w| f(w.matched.as_ref().expect("matched")).to_string());
        line(&mut out, "On support Untreated", &count(|m| m.n_on_support_untreated));
        line(&mut out, "On support treated", &count(|m| m.n_on_support_treated));
        line(&mut out, "Matched pairs", &count(MatchedSample::len));
    }
    if waves.iter().all(|w| w.balance.is_some()) {
        let stat = |f: fn(&BalanceReport) -> String| per_wave(&|w| f(&w.balance.as_ref().expect("balance").1));
        line(&mut out, "Mean Bias", &stat(|b| format!("{:.1}", b.mean_abs_bias)));
        line(&mut out, "Rubin's B", &stat(|b| opt(b.rubin_b, 1)));
        line(&mut out, "Rubin's R", &stat(|b| opt(b.rubin_r, 2)));
    }

    let n_weighted = waves.first().map_or(0, |w| w.weighted.len());
    if n_weighted > 0 {
        out.push('\n');
        let mut heads = headers.clone();
        if waves.len() == 2 {
            heads.push("Difference".to_string());
        }
        line(&mut out, &format!("Weighting ({})", settings.estimand.as_str()), &heads);
        for k in 0..n_weighted {
            let name = waves[0].weighted[k].estimator.as_str();
            let mut values = per_wave(&|w| starred(w.weighted[k].value, w.weighted[k].p_value));
            let mut ses = per_wave(&|w| format!("({:.3})", w.weighted[k].robust_se));
            if let [pre, post] = waves {
                let (a, b) = (&pre.weighted[k], &post.weighted[k]);
                let diff = decimal_difference(b.value, a.value);
                let se = a.robust_se.hypot(b.robust_se);
                values.push(starred(diff, two_sided_p(diff / se)));
                ses.push(format!("({se:.3})"));
            }
            line(&mut out, name, &values);
            line(&mut out, "", &ses);
        }
    }
    out.push_str("\n*** p < 0.01, ** p < 0.05, * p < 0.1\n");
    out
}
