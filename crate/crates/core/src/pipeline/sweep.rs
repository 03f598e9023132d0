use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::report::{ReportFile, RunOutcome};
use super::run::{analyze_wave, load_inputs, Goal};
use super::{at, Estimator, PipelineConfig, PipelineError, Settings, Stage};
use crate::effects::{did_of_att, DidEstimate};
use crate::stats::{stars, two_sided_p};
use crate::tabular::{filter_subgroup, AnalysisFrame, Field, Predicate};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub group: i64,
    pub label: String,
    pub did: DidEstimate,
    /// `β − β*`: group effect minus pooled effect.
    pub difference: f64,
    /// `√(SE_g² + SE_pooled²)`.
    pub difference_se: f64,
    pub difference_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedGroup {
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub field: Field,
    pub pooled: DidEstimate,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedGroup>,
}

impl SweepReport {
    pub fn row(&self, label: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn sweepable(field: Field) -> bool {
    field.is_categorical()
        || matches!(
            field,
            Field::UrbanRural | Field::Gender | Field::WealthIndex | Field::Education
        )
}

fn did_for(frames: &[AnalysisFrame], settings: &Settings) -> Result<DidEstimate, PipelineError> {
    let waves = frames
        .iter()
        .map(|f| analyze_wave(f.clone(), settings, Goal::Estimate))
        .collect::<Result<Vec<_>, _>>()?;
    let pre = waves[0].att.as_ref().expect("psm requested");
    let post = waves[1].att.as_ref().expect("psm requested");
    Ok(did_of_att(pre, post))
}

/// Caste code for "don't know": loaded, but never analysed as its own group.
const CASTE_UNKNOWN: i64 = 8;

fn arm_sizes(frame: &AnalysisFrame) -> (usize, usize) {
    let t = frame.n_treated();
    (t, frame.len() - t)
}

/// Matched DiD effect per level of `field`, each compared with the pooled
/// effect. Groups run in parallel; groups too small to analyse, or whose
/// analysis fails, are listed in `skipped` rather than aborting the sweep.
pub fn subgroup_sweep(config: &PipelineConfig, field: Field) -> Result<SweepReport, PipelineError> {
    if !sweepable(field) {
        return Err(PipelineError::new(
            Stage::Config,
            format!("cannot sweep over `{field}`: pick a categorical field"),
        ));
    }
    let mut settings = config.resolve()?;
    settings.estimators = vec![Estimator::Psm];
    let mut frames = load_inputs(config, &settings)?;
    if frames.len() != 2 {
        return Err(PipelineError::new(Stage::Config, "a sweep needs both a pre and a post wave"));
    }
    if !settings.subgroups.is_empty() {
        frames = frames
            .iter()
            .map(|f| filter_subgroup(f, &settings.subgroups, &settings.zones).map_err(at(Stage::Filter)))
            .collect::<Result<_, _>>()?;
    }
    let pooled = did_for(&frames, &settings)?;

    let mut levels = BTreeSet::new();
    for f in &frames {
        for r in &f.records {
            levels.insert(field.value(r, &settings.zones).map_err(at(Stage::Filter))?);
        }
    }
    let mut group_settings = settings.clone();
    group_settings.design = settings.design.without(field);

    let results: Vec<Result<SweepRow, SkippedGroup>> = levels
        .into_par_iter()
        .map(|g| {
            let label = field.display_value(g);
            let skip = |reason: String| SkippedGroup {
                label: label.clone(),
                reason,
            };
            if field == Field::Caste && g == CASTE_UNKNOWN {
                return Err(skip("code 8 (don't know) is excluded from caste subgroups".into()));
            }
            let pred = [Predicate::eq(field, g)];
            let sub = frames
                .iter()
                .map(|f| filter_subgroup(f, &pred, &settings.zones))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| skip(e.to_string()))?;
            let floor = settings.min_group_size;
            for f in &sub {
                let (t, c) = arm_sizes(f);
                if t < floor || c < floor {
                    let wave = f.wave.map_or("mixed", |w| w.as_str());
                    return Err(skip(format!(
                        "{wave} wave has {t} treated and {c} control records, below the minimum of {floor}"
                    )));
                }
            }
            let did = did_for(&sub, &group_settings).map_err(|e| skip(e.to_string()))?;
            let difference = did.effect - pooled.effect;
            let difference_se = did.se.hypot(pooled.se);
            Ok(SweepRow {
                group: g,
                label: label.clone(),
                difference_p: two_sided_p(difference / difference_se),
                did,
                difference,
                difference_se,
            })
        })
        .collect();

    let (mut rows, mut skipped) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(s) => skipped.push(s),
        }
    }
    Ok(SweepReport {
        field,
        pooled,
        rows,
        skipped,
    })
}

/// `Zone,ATT,SE,t,stars,β−β*,SE(β−β*),p(β−β*),significance`, groups in
/// code order followed by the pooled `All` row.
pub fn render_sweep(report: &SweepReport) -> String {
    let mut out = format!(
        "{},ATT,SE,t,stars,β−β*,SE(β−β*),p(β−β*),significance\n",
        report.field.label()
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.2},{},{:.4},{:.4},{:.4},{}",
            r.label,
            r.did.effect,
            r.did.se,
            r.did.t_stat,
            stars(r.did.p_value),
            r.difference,
            r.difference_se,
            r.difference_p,
            stars(r.difference_p)
        );
    }
    let p = &report.pooled;
    let _ = writeln!(
        out,
        "All,{:.4},{:.4},{:.2},{},,,,",
        p.effect,
        p.se,
        p.t_stat,
        stars(p.p_value)
    );
    out
}

/// The sweep as a report bundle: `sweep.csv`, plus `sweep_skipped.txt`
/// when any group was skipped.
pub fn sweep(config: &PipelineConfig, field: Field) -> RunOutcome {
    let mut out = RunOutcome::default();
    match subgroup_sweep(config, field) {
        Ok(report) => {
            out.push(ReportFile::new("sweep.csv", render_sweep(&report)));
            if !report.skipped.is_empty() {
                let notes: String = report
                    .skipped
                    .iter()
                    .map(|s| format!("skipped {}: {}\n", s.label, s.reason))
                    .collect();
                out.push(ReportFile::new("sweep_skipped.txt", notes));
            }
        }
        Err(e) => out.error = Some(e),
    }
    out
}
