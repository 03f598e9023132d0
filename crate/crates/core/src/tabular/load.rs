use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    AnalysisFrame, Field, FrameError, ObservationRecord, Provenance, Rejection, Wave,
    SCHEMA_VERSION,
};

/// Cooking-fuel codes that collapse into the two outcome flags.
const FUEL_LPG: u16 = 2;
const FUEL_WOOD: u16 = 8;

const COVARIATE_COLUMNS: [Field; 11] = [
    Field::HouseholdId,
    Field::State,
    Field::Age,
    Field::Religion,
    Field::Caste,
    Field::Education,
    Field::WealthIndex,
    Field::UrbanRural,
    Field::Gender,
    Field::HhSize,
    Field::Treatment,
];

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub delimiter: u8,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { delimiter: b',' }
    }
}

impl LoadOptions {
    pub fn tab() -> Self {
        LoadOptions { delimiter: b'\t' }
    }
}

enum Outcomes {
    /// Raw fuel categorical, collapsed at load time.
    CookingFuel(usize),
    Flags { lpg: usize, firewood: usize },
}

struct Layout {
    covariates: [usize; 11],
    outcomes: Outcomes,
}

fn normalize(name: &str) -> String {
    name.trim()
        .trim_start_matches('\u{feff}')
        .to_ascii_lowercase()
        .replace([' ', '-'], "_")
}

impl Layout {
    fn from_headers(headers: &csv::StringRecord) -> Result<Layout, FrameError> {
        let mut by_field: BTreeMap<Field, usize> = BTreeMap::new();
        let mut fuel = None;
        for (i, h) in headers.iter().enumerate() {
            let norm = normalize(h);
            if norm == "cooking_fuel" || norm == "fuel" {
                fuel = Some(i);
            } else if let Ok(f) = norm.parse::<Field>() {
                by_field.entry(f).or_insert(i);
            }
        }
        let mut covariates = [0usize; 11];
        for (slot, field) in covariates.iter_mut().zip(COVARIATE_COLUMNS) {
            *slot = *by_field
                .get(&field)
                .ok_or_else(|| FrameError::MissingColumn(field.name().to_string()))?;
        }
        let outcomes = match (
            by_field.get(&Field::LpgAccess),
            by_field.get(&Field::FirewoodUse),
            fuel,
        ) {
            (Some(&lpg), Some(&firewood), _) => Outcomes::Flags { lpg, firewood },
            (_, _, Some(col)) => Outcomes::CookingFuel(col),
            (None, _, None) => return Err(FrameError::MissingColumn("cooking_fuel".into())),
            (Some(_), None, None) => return Err(FrameError::MissingColumn("firewood_use".into())),
        };
        Ok(Layout {
            covariates,
            outcomes,
        })
    }
}

struct RowFailure {
    field: String,
    reason: String,
    missing: Vec<String>,
}

fn parse_int<T: std::str::FromStr>(raw: &str, name: &str) -> Result<T, RowFailure> {
    raw.parse::<T>().map_err(|_| RowFailure {
        field: name.to_string(),
        reason: format!("{name} is not a valid integer: `{raw}`"),
        missing: Vec::new(),
    })
}

fn parse_flag(raw: &str, name: &str) -> Result<bool, RowFailure> {
    match raw {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(RowFailure {
            field: name.to_string(),
            reason: format!("{name} must be 0 or 1, got `{raw}`"),
            missing: Vec::new(),
        }),
    }
}

fn parse_row(
    row: &csv::StringRecord,
    layout: &Layout,
    wave: Wave,
) -> Result<ObservationRecord, RowFailure> {
    let cell = |i: usize| row.get(i).unwrap_or("").trim();

    let mut used: Vec<(usize, &'static str)> = COVARIATE_COLUMNS
        .iter()
        .zip(layout.covariates)
        .map(|(f, i)| (i, f.name()))
        .collect();
    match layout.outcomes {
        Outcomes::CookingFuel(i) => used.push((i, "cooking_fuel")),
        Outcomes::Flags { lpg, firewood } => {
            used.push((lpg, Field::LpgAccess.name()));
            used.push((firewood, Field::FirewoodUse.name()));
        }
    }
    let missing: Vec<String> = used
        .iter()
        .filter(|(i, _)| cell(*i).is_empty())
        .map(|(_, n)| n.to_string())
        .collect();
    if let Some(first) = missing.first() {
        return Err(RowFailure {
            field: first.clone(),
            reason: format!("missing value for {first}"),
            missing,
        });
    }

    let c = &layout.covariates;
    let (lpg_access, firewood_use) = match layout.outcomes {
        Outcomes::CookingFuel(i) => {
            let code: u16 = parse_int(cell(i), "cooking_fuel")?;
            if !matches!(code, 1..=11 | 95 | 96) {
                return Err(RowFailure {
                    field: "cooking_fuel".into(),
                    reason: format!("cooking_fuel code {code} is not a known fuel"),
                    missing: Vec::new(),
                });
            }
            (code == FUEL_LPG, code == FUEL_WOOD)
        }
        Outcomes::Flags { lpg, firewood } => (
            parse_flag(cell(lpg), Field::LpgAccess.name())?,
            parse_flag(cell(firewood), Field::FirewoodUse.name())?,
        ),
    };
    let rec = ObservationRecord {
        household_id: cell(c[0]).to_string(),
        state: parse_int(cell(c[1]), "state")?,
        age: parse_int(cell(c[2]), "age")?,
        religion: parse_int(cell(c[3]), "religion")?,
        caste: parse_int(cell(c[4]), "caste")?,
        education: parse_int(cell(c[5]), "educ")?,
        wealth_index: parse_int(cell(c[6]), "wealth_index")?,
        urban_rural: parse_int(cell(c[7]), "urban_rural")?,
        gender: parse_int(cell(c[8]), "gender")?,
        hh_size: parse_int(cell(c[9]), "hhsize")?,
        treatment: parse_flag(cell(c[10]), "bplcard")?,
        lpg_access,
        firewood_use,
        wave,
    };
    rec.validate().map_err(|v| RowFailure {
        field: v.field.name().to_string(),
        reason: v.reason,
        missing: Vec::new(),
    })?;
    Ok(rec)
}

/// Reads a delimited frame from any reader. Rows failing validation are
/// rejected into the frame's log; more than half rejected aborts.
pub fn read_frame<R: Read>(
    reader: R,
    wave: Wave,
    options: LoadOptions,
    source: &str,
) -> Result<AnalysisFrame, FrameError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let layout = Layout::from_headers(rdr.headers()?)?;

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut missingness: BTreeMap<String, usize> = BTreeMap::new();
    let mut input_rows = 0usize;
    let mut row = csv::StringRecord::new();
    while rdr.read_record(&mut row)? {
        input_rows += 1;
        match parse_row(&row, &layout, wave) {
            Ok(rec) => records.push(rec),
            Err(fail) => {
                for col in fail.missing {
                    *missingness.entry(col).or_default() += 1;
                }
                rejections.push(Rejection {
                    row: input_rows,
                    field: fail.field,
                    reason: fail.reason,
                });
            }
        }
    }

    if input_rows > 0 && rejections.len() * 2 > input_rows {
        return Err(FrameError::SchemaMismatch {
            rejected: rejections.len(),
            total: input_rows,
            first: rejections[0].to_string(),
        });
    }
    let mut warnings = Vec::new();
    if input_rows == 0 {
        warnings.push(format!("{source}: no data rows"));
    }
    if !missingness.is_empty() {
        let cols: Vec<String> = missingness.iter().map(|(k, v)| format!("{k}={v}")).collect();
        warnings.push(format!(
            "{source}: listwise rejection of incomplete rows ({})",
            cols.join(", ")
        ));
    }
    let loaded = records.len();
    Ok(AnalysisFrame {
        records,
        schema_version: SCHEMA_VERSION.to_string(),
        provenance: Provenance {
            source: source.to_string(),
            input_rows,
            loaded,
            rejected: rejections.len(),
        },
        wave: Some(wave),
        rejections,
        missingness,
        warnings,
    })
}

/// Loads one survey wave from a delimited file.
pub fn load_frame(path: &Path, wave: Wave, options: LoadOptions) -> Result<AnalysisFrame, FrameError> {
    let file = File::open(path).map_err(|source| FrameError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_frame(std::io::BufReader::new(file), wave, options, &path.display().to_string())
}

/// Writes a frame in the canonical schema (outcome flags rather than the raw
/// fuel code). Reading the output back yields the same records.
pub fn write_frame<W: Write>(frame: &AnalysisFrame, out: W, options: LoadOptions) -> Result<(), FrameError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(options.delimiter)
        .from_writer(out);
    let mut header: Vec<&str> = COVARIATE_COLUMNS.iter().map(|f| f.name()).collect();
    header.push(Field::LpgAccess.name());
    header.push(Field::FirewoodUse.name());
    w.write_record(&header)?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for r in &frame.records {
        w.write_record([
            r.household_id.as_str(),
            &r.state.to_string(),
            &r.age.to_string(),
            &r.religion.to_string(),
            &r.caste.to_string(),
            &r.education.to_string(),
            &r.wealth_index.to_string(),
            &r.urban_rural.to_string(),
            &r.gender.to_string(),
            &r.hh_size.to_string(),
            flag(r.treatment),
            flag(r.lpg_access),
            flag(r.firewood_use),
        ])?;
    }
    w.flush().map_err(|source| FrameError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "hhid,state,age,religion,caste,educ,wealth_index,urban_rural,gender,hhsize,bplcard,cooking_fuel\n";

    fn read(text: &str) -> Result<AnalysisFrame, FrameError> {
        read_frame(text.as_bytes(), Wave::Pre, LoadOptions::default(), "test")
    }

    #[test]
    fn three_valid_rows() {
        let text = format!(
            "{HEADER}h1,17,45,1,3,1,2,2,1,5,1,2\nh2,4,30,3,2,0,1,2,2,3,0,8\nh3,12,60,4,4,3,5,1,1,2,0,5\n"
        );
        let f = read(&text).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.provenance.rejected, 0);
        assert!(f.records[0].lpg_access && !f.records[0].firewood_use);
        assert!(f.records[1].firewood_use && !f.records[1].lpg_access);
        assert!(!f.records[2].lpg_access && !f.records[2].firewood_use);
    }

    #[test]
    fn out_of_range_age_is_logged() {
        let text = format!(
            "{HEADER}h1,17,150,1,3,1,2,2,1,5,1,2\nh2,17,45,1,3,1,2,2,1,5,1,2\nh3,17,45,1,3,1,2,2,1,5,0,8\n"
        );
        let f = read(&text).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.rejections.len(), 1);
        assert_eq!(f.rejections[0].row, 1);
        assert_eq!(f.rejections[0].field, "age");
        assert_eq!(f.rejections[0].reason, "age out of range [10,98]");
        assert_eq!(
            f.provenance.loaded + f.provenance.rejected,
            f.provenance.input_rows
        );
    }

    #[test]
    fn empty_body_warns() {
        let f = read(HEADER).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.warnings.len(), 1);
    }

    #[test]
    fn missing_column_is_an_error() {
        let err = read("hhid,state,age\nh1,1,20\n").unwrap_err();
        assert!(matches!(err, FrameError::MissingColumn(c) if c == "religion"));
    }

    #[test]
    fn headers_are_case_insensitive() {
        let text = "HHID,State,Age,Religion,Caste,Educ,Wealth Index,Urban,Gender,HHSize,BPL card,Cooking Fuel\nh1,17,45,1,3,1,2,2,1,5,1,2\n";
        assert_eq!(read(text).unwrap().len(), 1);
    }

    #[test]
    fn majority_rejection_aborts() {
        let text = format!("{HEADER}h1,17,150,1,3,1,2,2,1,5,1,2\nh2,17,45,1,3,1,2,2,1,5,1,2\nh3,17,9,1,3,1,2,2,1,5,1,2\n");
        assert!(matches!(read(&text), Err(FrameError::SchemaMismatch { rejected: 2, total: 3, .. })));
    }

    #[test]
    fn missing_cells_are_counted() {
        let text = format!(
            "{HEADER}h1,17,45,1,,1,2,2,1,5,1,2\nh2,17,45,1,3,1,2,2,1,5,1,2\nh3,17,45,1,3,1,2,2,1,5,1,2\n"
        );
        let f = read(&text).unwrap();
        assert_eq!(f.missingness.get("caste"), Some(&1));
        assert_eq!(f.rejections[0].reason, "missing value for caste");
    }

    #[test]
    fn tab_delimited() {
        let text = HEADER.replace(',', "\t") + "h1\t17\t45\t1\t3\t1\t2\t2\t1\t5\t1\t2\n";
        let f = read_frame(text.as_bytes(), Wave::Post, LoadOptions::tab(), "t").unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.wave, Some(Wave::Post));
    }

    #[test]
    fn write_then_read_is_stable() {
        let text = format!("{HEADER}h1,17,45,1,3,1,2,2,1,5,1,2\nh2,4,30,3,2,0,1,2,2,3,0,8\n");
        let f = read(&text).unwrap();
        let mut buf = Vec::new();
        write_frame(&f, &mut buf, LoadOptions::default()).unwrap();
        let g = read_frame(buf.as_slice(), Wave::Pre, LoadOptions::default(), "test").unwrap();
        assert_eq!(f.records, g.records);
        let mut buf2 = Vec::new();
        write_frame(&g, &mut buf2, LoadOptions::default()).unwrap();
        assert_eq!(buf, buf2);
    }
}
