use std::collections::BTreeMap;

use super::{AnalysisFrame, Field, FrameError, ZoneMap};

/// One group of a proportion table. `proportion` is `None` for empty groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionRow {
    pub group: i64,
    pub label: String,
    pub count: usize,
    pub successes: usize,
    /// Percentage, `100 * mean(indicator)`.
    pub proportion: Option<f64>,
}

impl ProportionRow {
    pub fn formatted(&self) -> String {
        match self.proportion {
            Some(p) => format!("{p:.2}"),
            None => "—".to_string(),
        }
    }
}

/// Percentage of records with the indicator set, per group.
///
/// Groups are the distinct values present in the frame, plus any `levels`
/// supplied explicitly (which then appear with count 0 when absent).
pub fn proportion_table(
    frame: &AnalysisFrame,
    group_field: Field,
    indicator_field: Field,
    zones: &ZoneMap,
    levels: Option<&[i64]>,
) -> Result<Vec<ProportionRow>, FrameError> {
    if !indicator_field.is_boolean() {
        return Err(FrameError::FieldNotUsable(
            indicator_field.name().into(),
            "indicator must be a boolean field",
        ));
    }
    let mut tally: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for level in levels.unwrap_or(&[]) {
        tally.entry(*level).or_default();
    }
    for rec in &frame.records {
        let g = group_field.value(rec, zones)?;
        let entry = tally.entry(g).or_default();
        entry.0 += 1;
        if indicator_field.flag(rec).unwrap_or(false) {
            entry.1 += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(group, (count, successes))| ProportionRow {
            group,
            label: group_field.display_value(group),
            count,
            successes,
            proportion: (count > 0).then(|| 100.0 * successes as f64 / count as f64),
        })
        .collect())
}

/// Delimited rendering: `group,proportion,count`.
pub fn render_proportion_table(rows: &[ProportionRow], group_field: Field) -> String {
    let mut out = format!("{},proportion,count\n", group_field.label());
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.label, r.formatted(), r.count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::fixtures::record;
    use crate::tabular::Zone;

    #[test]
    fn single_group_half() {
        let recs = (0..4)
            .map(|i| {
                let mut r = record(&i.to_string());
                r.lpg_access = i % 2 == 0;
                r
            })
            .collect();
        let f = AnalysisFrame::from_records(recs, "t");
        let rows = proportion_table(&f, Field::Wave, Field::LpgAccess, &ZoneMap::default(), None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].formatted(), "50.00");
    }

    #[test]
    fn grouped_by_treatment_matches_hand_count() {
        // 12 rows: treated rows 0..5 have LPG on ids 0,3 ; controls 5..12 have LPG on 5,6,7,11
        let lpg = [0usize, 3, 5, 6, 7, 11];
        let recs = (0..12)
            .map(|i| {
                let mut r = record(&i.to_string());
                r.treatment = i < 5;
                r.lpg_access = lpg.contains(&i);
                r
            })
            .collect();
        let f = AnalysisFrame::from_records(recs, "t");
        let rows = proportion_table(&f, Field::Treatment, Field::LpgAccess, &ZoneMap::default(), None).unwrap();
        assert_eq!(rows[0].group, 0);
        assert_eq!((rows[0].count, rows[0].successes), (7, 4));
        assert_eq!(rows[0].formatted(), "57.14");
        assert_eq!((rows[1].count, rows[1].successes), (5, 2));
        assert_eq!(rows[1].formatted(), "40.00");
        assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), f.len());
    }

    #[test]
    fn empty_level_is_flagged() {
        let f = AnalysisFrame::from_records(vec![record("a")], "t");
        let levels: Vec<i64> = Zone::ALL.iter().map(|z| z.code()).collect();
        let rows = proportion_table(&f, Field::Zone, Field::LpgAccess, &ZoneMap::default(), Some(&levels)).unwrap();
        assert_eq!(rows.len(), 6);
        let north = &rows[0];
        assert_eq!(north.count, 0);
        assert_eq!(north.proportion, None);
        assert_eq!(north.formatted(), "—");
        let rendered = render_proportion_table(&rows, Field::Zone);
        assert!(rendered.contains("North,—,0"));
        assert!(!rendered.contains("NaN"));
    }

    #[test]
    fn non_boolean_indicator_rejected() {
        let f = AnalysisFrame::from_records(vec![record("a")], "t");
        assert!(proportion_table(&f, Field::Zone, Field::Age, &ZoneMap::default(), None).is_err());
    }
}
