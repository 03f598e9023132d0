use std::fmt::Write as _;

use super::report::{self, ReportFile, RunOutcome};
use super::{at, Estimator, PipelineConfig, PipelineError, Settings, Stage};
use crate::effects::{
    aipw_with_scores, att_matched, decimal_difference, did_of_att, fit_outcome_models, ipw_with_scores,
    regression_imputation, render_estimates, AttEstimate, DidEstimate, EstimateRow, WeightedEstimate,
};
use crate::glm::{fit, render_coefficient_table, write_model, FittedPropensityModel};
use crate::psmatch::{
    balance_report, common_support, density_quadrants, nn_match, render_balance, render_balance_summary, render_pairs,
    BalanceReport, DensityRow, MatchedSample, Scored, SupportRegion,
};
use crate::sensitivity::{mh_bounds, render_mh_bounds, render_mh_two_wave, MhBoundRow};
use crate::synthgen::{monte_carlo, render_monte_carlo, MonteCarloConfig, SyntheticSpec};
use crate::tabular::{
    filter_subgroup, load_frame, proportion_table, render_proportion_table, write_frame, AnalysisFrame, Field,
    ObservationRecord, Wave,
};

/// How far a run goes. Every goal fits the propensity model; all but
/// [`Goal::Fit`] also match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Fit,
    Match,
    Balance,
    Estimate,
    Sensitivity,
    Full,
}

impl Goal {
    fn matches(self) -> bool {
        self != Goal::Fit
    }

    fn balance(self) -> bool {
        matches!(self, Goal::Balance | Goal::Full)
    }

    fn estimate(self) -> bool {
        matches!(self, Goal::Estimate | Goal::Full)
    }

    fn sensitivity(self) -> bool {
        matches!(self, Goal::Sensitivity | Goal::Full)
    }
}

/// Everything computed for one wave. Stages not requested stay empty.
#[derive(Debug, Clone)]
pub struct WaveAnalysis {
    pub wave: Wave,
    pub frame: AnalysisFrame,
    pub model: FittedPropensityModel,
    pub scores: Vec<f64>,
    pub support: Option<SupportRegion>,
    pub matched: Option<MatchedSample>,
    /// Full sample, then matched sample.
    pub balance: Option<(BalanceReport, BalanceReport)>,
    pub density: Vec<(&'static str, Vec<DensityRow>)>,
    pub att: Option<AttEstimate>,
    pub weighted: Vec<WeightedEstimate>,
    pub bounds: Vec<MhBoundRow>,
}

impl WaveAnalysis {
    fn outcome(&self, settings: &Settings, id: usize) -> Option<bool> {
        self.frame.records.get(id).and_then(|r| settings.outcome.flag(r))
    }

    fn matched_records(&self) -> (Vec<&ObservationRecord>, Vec<&ObservationRecord>) {
        let m = self.matched.as_ref().expect("matched stage ran");
        m.pairs
            .iter()
            .map(|p| (&self.frame.records[p.treated], &self.frame.records[p.control]))
            .unzip()
    }
}

fn wave_of(frame: &AnalysisFrame) -> Result<Wave, PipelineError> {
    frame
        .wave
        .ok_or_else(|| PipelineError::new(Stage::Load, format!("{} mixes waves", frame.provenance.source)))
}

fn stage_fit(frame: AnalysisFrame, settings: &Settings) -> Result<WaveAnalysis, PipelineError> {
    let wave = wave_of(&frame)?;
    let model = fit(&frame, &settings.design, settings.link)
        .map_err(|e| PipelineError::new(Stage::Fit, format!("{wave} wave: {e}")))?;
    let scores = model.score_frame(&frame);
    Ok(WaveAnalysis {
        wave,
        frame,
        model,
        scores,
        support: None,
        matched: None,
        balance: None,
        density: Vec::new(),
        att: None,
        weighted: Vec::new(),
        bounds: Vec::new(),
    })
}

fn stage_match(wa: &mut WaveAnalysis, settings: &Settings) -> Result<(), PipelineError> {
    let (mut treated, mut controls) = (Vec::new(), Vec::new());
    for (i, (r, s)) in wa.frame.records.iter().zip(&wa.scores).enumerate() {
        if r.treatment { &mut treated } else { &mut controls }.push(Scored::new(i, *s));
    }
    let wave = wa.wave;
    let region = common_support(&treated, &controls)
        .map_err(|e| PipelineError::new(Stage::Support, format!("{wave} wave: {e}")))?;
    let matched = nn_match(&region.retain(&treated), &region.retain(&controls), settings.matching)
        .map_err(|e| PipelineError::new(Stage::Match, format!("{wave} wave: {e}")))?;
    if matched.is_empty() {
        return Err(PipelineError::new(Stage::Match, format!("{wave} wave: no pairs within the caliper")));
    }
    wa.support = Some(region);
    wa.matched = Some(matched);
    Ok(())
}

fn stage_balance(wa: &mut WaveAnalysis, settings: &Settings) -> Result<(), PipelineError> {
    let fail = |e: crate::psmatch::MatchError| PipelineError::new(Stage::Balance, format!("{} wave: {e}", wa.wave));
    let (all_t, all_c): (Vec<&ObservationRecord>, Vec<&ObservationRecord>) =
        wa.frame.records.iter().partition(|r| r.treatment);
    let before = balance_report(&all_t, &all_c, &wa.model).map_err(fail)?;
    let (mt, mc) = wa.matched_records();
    let after = balance_report(&mt, &mc, &wa.model).map_err(fail)?;

    let (mut tb, mut cb) = (Vec::new(), Vec::new());
    for (r, s) in wa.frame.records.iter().zip(&wa.scores) {
        if r.treatment { &mut tb } else { &mut cb }.push(*s);
    }
    let m = wa.matched.as_ref().expect("matched stage ran");
    let ta: Vec<f64> = m.pairs.iter().map(|p| wa.scores[p.treated]).collect();
    let ca: Vec<f64> = m.pairs.iter().map(|p| wa.scores[p.control]).collect();
    let density = density_quadrants(&tb, &cb, &ta, &ca, settings.density_bins).map_err(fail)?;
    wa.balance = Some((before, after));
    wa.density = density;
    Ok(())
}

fn stage_estimate(wa: &mut WaveAnalysis, settings: &Settings) -> Result<(), PipelineError> {
    let wave = wa.wave;
    let fail = |e: crate::effects::EffectError| PipelineError::new(Stage::Estimate, format!("{wave} wave: {e}"));
    if settings.wants(Estimator::Psm) {
        let m = wa.matched.as_ref().expect("matched stage ran");
        wa.att = Some(att_matched(m, |id| wa.outcome(settings, id)).map_err(fail)?);
    }
    let (outcome, estimand, trim) = (settings.outcome, settings.estimand, settings.trim);
    let models = if settings.wants(Estimator::Aipw) || settings.wants(Estimator::Regression) {
        Some(fit_outcome_models(&wa.frame, &settings.design, outcome).map_err(fail)?)
    } else {
        None
    };
    let mut weighted = Vec::new();
    for &e in &settings.estimators {
        let est = match e {
            Estimator::Psm => continue,
            Estimator::Ipw => ipw_with_scores(&wa.frame, &wa.scores, outcome, estimand, trim),
            Estimator::Aipw => aipw_with_scores(
                &wa.frame,
                &wa.scores,
                models.as_ref().expect("fitted"),
                outcome,
                estimand,
                trim,
            ),
            Estimator::Regression => regression_imputation(&wa.frame, models.as_ref().expect("fitted"), estimand),
        };
        weighted.push(est.map_err(fail)?);
    }
    wa.weighted = weighted;
    Ok(())
}

fn stage_sensitivity(wa: &mut WaveAnalysis, settings: &Settings) -> Result<(), PipelineError> {
    let m = wa.matched.as_ref().expect("matched stage ran");
    let pairs: Vec<(bool, bool)> = m
        .pairs
        .iter()
        .map(|p| {
            let t = wa.outcome(settings, p.treated).expect("outcome flag");
            let c = wa.outcome(settings, p.control).expect("outcome flag");
            (t, c)
        })
        .collect();
    wa.bounds = mh_bounds(&pairs, &settings.grid, settings.mh)
        .map_err(|e| PipelineError::new(Stage::Sensitivity, format!("{} wave: {e}", wa.wave)))?;
    Ok(())
}

/// Runs the stages `goal` needs on one (already filtered) wave.
pub fn analyze_wave(frame: AnalysisFrame, settings: &Settings, goal: Goal) -> Result<WaveAnalysis, PipelineError> {
    let mut wa = stage_fit(frame, settings)?;
    if goal.matches() {
        stage_match(&mut wa, settings)?;
    }
    if goal.balance() {
        stage_balance(&mut wa, settings)?;
    }
    if goal.estimate() {
        stage_estimate(&mut wa, settings)?;
    }
    if goal.sensitivity() {
        stage_sensitivity(&mut wa, settings)?;
    }
    Ok(wa)
}

fn synthetic_spec(config: &PipelineConfig) -> Result<Option<SyntheticSpec>, PipelineError> {
    let spec = match (&config.synthetic, config.benchmark) {
        (Some(path), _) => SyntheticSpec::from_path(path).map_err(at(Stage::Load))?,
        (None, true) => SyntheticSpec::benchmark(),
        (None, false) => return Ok(None),
    };
    let mut spec = match config.seed {
        Some(seed) => spec.with_seed(seed),
        None => spec,
    };
    if let Some(n) = config.n_per_wave {
        spec.n_per_wave = n;
    }
    spec.validate().map_err(at(Stage::Load))?;
    Ok(Some(spec))
}

/// Reads or generates the configured waves, pre before post.
pub fn load_inputs(config: &PipelineConfig, settings: &Settings) -> Result<Vec<AnalysisFrame>, PipelineError> {
    if let Some(spec) = synthetic_spec(config)? {
        if config.pre.is_some() || config.post.is_some() {
            return Err(PipelineError::new(
                Stage::Config,
                "give either input files or a synthetic spec, not both",
            ));
        }
        return [Wave::Pre, Wave::Post]
            .into_iter()
            .map(|w| spec.generate(w).map_err(at(Stage::Load)))
            .collect();
    }
    let inputs: Vec<_> = [(Wave::Pre, &config.pre), (Wave::Post, &config.post)]
        .into_iter()
        .filter_map(|(w, p)| p.as_ref().map(|p| (w, p)))
        .collect();
    if inputs.is_empty() {
        return Err(PipelineError::new(
            Stage::Config,
            "no input: set `pre` and/or `post`, `synthetic`, or `benchmark`",
        ));
    }
    inputs
        .into_iter()
        .map(|(w, p)| load_frame(p, w, settings.load).map_err(at(Stage::Load)))
        .collect()
}

fn apply_subgroups(frames: Vec<AnalysisFrame>, settings: &Settings) -> Result<Vec<AnalysisFrame>, PipelineError> {
    if settings.subgroups.is_empty() {
        return Ok(frames);
    }
    frames
        .iter()
        .map(|f| {
            let kept = filter_subgroup(f, &settings.subgroups, &settings.zones).map_err(at(Stage::Filter))?;
            if kept.is_empty() {
                return Err(PipelineError::new(
                    Stage::Filter,
                    format!("{}: no records satisfy the subgroup predicates", f.provenance.source),
                ));
            }
            Ok(kept)
        })
        .collect()
}

fn frames_table(raw: &[AnalysisFrame], kept: &[AnalysisFrame]) -> String {
    let mut out = String::from("wave,source,input_rows,loaded,rejected,analysed,treated,control\n");
    for (f, k) in raw.iter().zip(kept) {
        let wave = wave_label(f);
        let p = &f.provenance;
        let t = k.n_treated();
        let _ = writeln!(
            out,
            "{wave},{},{},{},{},{},{t},{}",
            p.source,
            p.input_rows,
            p.loaded,
            p.rejected,
            k.len(),
            k.len() - t
        );
    }
    out
}

fn rejections_file(frame: &AnalysisFrame) -> Option<ReportFile> {
    if frame.rejections.is_empty() {
        return None;
    }
    let mut out = String::from("row\tfield\treason\n");
    for r in &frame.rejections {
        let _ = writeln!(out, "{r}");
    }
    Some(ReportFile::new(format!("rejections_{}.tsv", wave_label(frame)), out))
}

fn wave_label(frame: &AnalysisFrame) -> &'static str {
    frame.wave.map_or("mixed", Wave::as_str)
}

fn warnings_file(frames: &[AnalysisFrame]) -> Option<ReportFile> {
    let lines: Vec<&String> = frames.iter().flat_map(|f| &f.warnings).collect();
    (!lines.is_empty()).then(|| {
        ReportFile::new(
            "warnings.txt",
            lines.into_iter().map(|l| format!("{l}\n")).collect::<String>(),
        )
    })
}

fn support_table(waves: &[WaveAnalysis]) -> String {
    let mut out = String::from(
        "wave,lower,upper,on_support_treated,on_support_untreated,off_support_treated,off_support_untreated,matched_pairs,unmatched_treated\n",
    );
    for wa in waves {
        let (s, m) = (wa.support.as_ref().expect("support"), wa.matched.as_ref().expect("matched"));
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{},{},{},{},{}",
            wa.wave,
            s.lower,
            s.upper,
            m.n_on_support_treated,
            m.n_on_support_untreated,
            s.off_support_treated.len(),
            s.off_support_control.len(),
            m.len(),
            m.unmatched_treated.len()
        );
    }
    out
}

fn balance_tables(waves: &[WaveAnalysis]) -> (String, String, String) {
    let (mut rows, mut summary) = (String::new(), String::new());
    let mut density = String::from("wave,quadrant,bin_center,density\n");
    for (i, wa) in waves.iter().enumerate() {
        let (before, after) = wa.balance.as_ref().expect("balance");
        let first = i == 0;
        rows.push_str(&render_balance(&format!("{}_before", wa.wave), before, first));
        rows.push_str(&render_balance(&format!("{}_after", wa.wave), after, false));
        summary.push_str(&render_balance_summary(&format!("{}_before", wa.wave), before, first));
        summary.push_str(&render_balance_summary(&format!("{}_after", wa.wave), after, false));
        let body = crate::psmatch::render_density(&wa.density);
        for line in body.lines().skip(1) {
            let _ = writeln!(density, "{},{line}", wa.wave);
        }
    }
    (rows, summary, density)
}

fn difference_row(estimator: &str, estimand: &str, pre: (f64, f64, usize), post: (f64, f64, usize)) -> EstimateRow {
    EstimateRow {
        estimator: estimator.into(),
        estimand: estimand.into(),
        sample: "did".into(),
        value: decimal_difference(post.0, pre.0),
        se: pre.1.hypot(post.1),
        n: pre.2 + post.2,
    }
}

/// Per-wave rows, then post − pre rows when both waves ran.
fn estimate_rows(waves: &[WaveAnalysis], did: Option<&DidEstimate>) -> Vec<EstimateRow> {
    let mut rows = Vec::new();
    for wa in waves {
        let sample = wa.wave.as_str();
        if let Some(att) = &wa.att {
            rows.push(att.row(sample));
        }
        rows.extend(wa.weighted.iter().map(|w| w.row(sample)));
    }
    if let [pre, post] = waves {
        if let Some(d) = did {
            rows.push(d.row("PSM"));
        }
        for (a, b) in pre.weighted.iter().zip(&post.weighted) {
            rows.push(difference_row(
                a.estimator.as_str(),
                a.estimand.as_str(),
                (a.value, a.robust_se, a.n),
                (b.value, b.robust_se, b.n),
            ));
        }
    }
    rows
}

fn each_wave(
    waves: &mut [WaveAnalysis],
    settings: &Settings,
    stage: fn(&mut WaveAnalysis, &Settings) -> Result<(), PipelineError>,
) -> Result<(), PipelineError> {
    waves.iter_mut().try_for_each(|wa| stage(wa, settings))
}

fn execute(config: &PipelineConfig, goal: Goal, out: &mut RunOutcome) -> Result<(), PipelineError> {
    let settings = config.resolve()?;
    let raw = load_inputs(config, &settings)?;
    let kept = apply_subgroups(raw.clone(), &settings)?;
    out.push(ReportFile::new("frames.csv", frames_table(&raw, &kept)));
    for f in &raw {
        out.extend(rejections_file(f));
    }
    out.extend(warnings_file(&raw));

    let mut waves = kept
        .into_iter()
        .map(|f| stage_fit(f, &settings))
        .collect::<Result<Vec<_>, _>>()?;
    for wa in &waves {
        out.push(ReportFile::new(
            format!("model_{}.csv", wa.wave),
            render_coefficient_table(&wa.model.coefficient_table()),
        ));
        out.push(ReportFile::new(format!("model_{}.txt", wa.wave), write_model(&wa.model)));
    }
    if !goal.matches() {
        return Ok(());
    }

    each_wave(&mut waves, &settings, stage_match)?;
    out.push(ReportFile::new("support.csv", support_table(&waves)));
    for wa in &waves {
        let pairs = render_pairs(wa.matched.as_ref().expect("matched"), |id| {
            wa.frame.records[id].household_id.as_str()
        });
        out.push(ReportFile::new(format!("pairs_{}.csv", wa.wave), pairs));
    }

    if goal.balance() {
        each_wave(&mut waves, &settings, stage_balance)?;
        let (rows, summary, density) = balance_tables(&waves);
        out.push(ReportFile::new("balance.csv", rows));
        out.push(ReportFile::new("balance_summary.csv", summary));
        out.push(ReportFile::new("density.csv", density));
    }

    let mut did = None;
    if goal.estimate() {
        each_wave(&mut waves, &settings, stage_estimate)?;
        if let [pre, post] = waves.as_slice() {
            if let (Some(a), Some(b)) = (&pre.att, &post.att) {
                did = Some(did_of_att(a, b));
            }
        }
        out.push(ReportFile::new(
            "estimates.csv",
            render_estimates(&estimate_rows(&waves, did.as_ref())),
        ));
    }

    if goal.sensitivity() {
        each_wave(&mut waves, &settings, stage_sensitivity)?;
        let table = match waves.as_slice() {
            [pre, post] => render_mh_two_wave(&pre.bounds, &post.bounds),
            _ => render_mh_bounds(&waves[0].bounds),
        };
        out.push(ReportFile::new("sensitivity.csv", table));
    }

    if goal.estimate() {
        out.push(ReportFile::new(
            "summary.txt",
            report::render_summary(&settings, &waves, did.as_ref()),
        ));
    }
    Ok(())
}

/// Runs the stages `goal` asks for. Files of completed stages are kept even
/// when a later stage fails; the outcome then carries the error.
pub fn run(config: &PipelineConfig, goal: Goal) -> RunOutcome {
    let mut out = RunOutcome::default();
    if let Err(e) = execute(config, goal, &mut out) {
        out.error = Some(e);
    }
    out
}

/// The full pipeline.
pub fn run_pipeline(config: &PipelineConfig) -> RunOutcome {
    run(config, Goal::Full)
}

/// Validated, canonical copies of the input waves with their load logs.
pub fn ingest(config: &PipelineConfig) -> RunOutcome {
    let mut out = RunOutcome::default();
    let result = (|| -> Result<(), PipelineError> {
        let settings = config.resolve()?;
        let raw = load_inputs(config, &settings)?;
        let kept = apply_subgroups(raw.clone(), &settings)?;
        for (f, k) in raw.iter().zip(&kept) {
            let label = wave_label(f);
            let mut buf = Vec::new();
            write_frame(k, &mut buf, settings.load).map_err(at(Stage::Write))?;
            out.push(ReportFile::new(
                format!("frame_{label}.csv"),
                String::from_utf8(buf).expect("csv output is UTF-8"),
            ));
            out.extend(rejections_file(f));
            let mut log = String::new();
            let p = &f.provenance;
            let _ = writeln!(log, "source: {}", p.source);
            let _ = writeln!(log, "schema_version: {}", f.schema_version);
            let _ = writeln!(log, "input_rows: {}", p.input_rows);
            let _ = writeln!(log, "loaded: {}", p.loaded);
            let _ = writeln!(log, "rejected: {}", p.rejected);
            let _ = writeln!(log, "analysed: {}", k.len());
            for (col, n) in &f.missingness {
                let _ = writeln!(log, "missing {col}: {n}");
            }
            for w in &f.warnings {
                let _ = writeln!(log, "warning: {w}");
            }
            out.push(ReportFile::new(format!("ingest_{label}.txt"), log));
            let table = proportion_table(k, Field::Zone, settings.outcome, &settings.zones, None)
                .map_err(at(Stage::Load))?;
            out.push(ReportFile::new(
                format!("proportions_{label}.csv"),
                render_proportion_table(&table, Field::Zone),
            ));
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.error = Some(e);
    }
    out
}

/// Writes both synthetic waves (the built-in benchmark unless a spec file is
/// configured) and, with `replications > 0`, a Monte-Carlo report.
pub fn simulate(config: &PipelineConfig) -> RunOutcome {
    let mut out = RunOutcome::default();
    let result = (|| -> Result<(), PipelineError> {
        let settings = config.resolve()?;
        let mut cfg = config.clone();
        if cfg.synthetic.is_none() {
            cfg.benchmark = true;
        }
        let spec = synthetic_spec(&cfg)?.expect("a spec is always configured here");
        out.push(ReportFile::new("spec.toml", spec.to_toml()));
        for wave in [Wave::Pre, Wave::Post] {
            let frame = spec.generate(wave).map_err(at(Stage::Simulate))?;
            let mut buf = Vec::new();
            write_frame(&frame, &mut buf, settings.load).map_err(at(Stage::Write))?;
            out.push(ReportFile::new(
                format!("synthetic_{wave}.csv"),
                String::from_utf8(buf).expect("csv output is UTF-8"),
            ));
        }
        if config.replications > 0 {
            let mc = MonteCarloConfig {
                replications: config.replications,
                estimators: config.mc_estimators.clone(),
                misspecify: config.misspecify,
                design: settings.design.clone(),
                link: settings.link,
                trim: settings.trim,
                ..MonteCarloConfig::new(config.replications, Vec::new())
            };
            let report = monte_carlo(&spec, &mc).map_err(at(Stage::Simulate))?;
            out.push(ReportFile::new("monte_carlo.csv", render_monte_carlo(&report)));
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.error = Some(e);
    }
    out
}
