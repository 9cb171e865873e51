//! Loading, validation and joining of secondary-education and
//! higher-education enrollment records.
//!
//! Both files are UTF-8 CSV with a header row. Column names come from a
//! [`SecondaryColumns`] / [`EnrollmentColumns`] map. Every data row
//! either becomes a record or a [`Reject`] with a reason code.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RegionCode = u16;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: missing column `{column}` in header")]
    MissingColumn { file: String, column: String },
    #[error("{file}:{line}: duplicate student `{student_id}` in cohort year {cohort_year}")]
    DuplicateId {
        file: String,
        line: u64,
        student_id: String,
        cohort_year: i32,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    ParseError,
    MissingField,
    OutOfRange,
    RegionUnknown,
    YearOutOfWindow,
    DuplicateId,
    MalformedRow,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::ParseError => "ParseError",
            RejectReason::MissingField => "MissingField",
            RejectReason::OutOfRange => "OutOfRange",
            RejectReason::RegionUnknown => "RegionUnknown",
            RejectReason::YearOutOfWindow => "YearOutOfWindow",
            RejectReason::DuplicateId => "DuplicateId",
            RejectReason::MalformedRow => "MalformedRow",
        };
        f.write_str(s)
    }
}

/// One row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub file: String,
    pub line: u64,
    pub reason: RejectReason,
    pub raw_row: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeLevel {
    Professional,
    Technical,
}

impl DegreeLevel {
    pub fn parse(s: &str) -> Option<Self> {
        let lower = s.trim().to_lowercase();
        if lower.starts_with("prof") {
            Some(DegreeLevel::Professional)
        } else if lower.starts_with("tec") || lower.starts_with("téc") {
            Some(DegreeLevel::Technical)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DegreeLevel::Professional => "professional",
            DegreeLevel::Technical => "technical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondaryRecord {
    pub student_id: String,
    pub cohort_year: i32,
    pub home_region: RegionCode,
    pub school_id: String,
    pub math_score: Option<f64>,
    pub reading_score: Option<f64>,
    pub gpa: Option<f64>,
    pub family_income: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub student_id: String,
    pub enroll_year: i32,
    pub institution_id: String,
    pub campus_region: RegionCode,
    pub career_name: String,
    pub career_area: String,
    pub degree_level: DegreeLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentTrajectory {
    pub secondary: SecondaryRecord,
    pub enrollment: Option<EnrollmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondaryColumns {
    pub student_id: String,
    pub cohort_year: String,
    pub home_region: String,
    pub school_id: String,
    pub math_score: String,
    pub reading_score: String,
    pub gpa: String,
    pub family_income: String,
}

impl Default for SecondaryColumns {
    fn default() -> Self {
        Self {
            student_id: "mrun".into(),
            cohort_year: "agno".into(),
            home_region: "cod_reg_rbd".into(),
            school_id: "rbd".into(),
            math_score: "ptje_mate".into(),
            reading_score: "ptje_clec".into(),
            gpa: "prom_notas".into(),
            family_income: "ingreso_familiar".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrollmentColumns {
    pub student_id: String,
    pub enroll_year: String,
    pub institution_id: String,
    pub campus_region: String,
    pub career_name: String,
    pub career_area: String,
    pub degree_level: String,
}

impl Default for EnrollmentColumns {
    fn default() -> Self {
        Self {
            student_id: "mrun".into(),
            enroll_year: "cat_periodo".into(),
            institution_id: "cod_inst".into(),
            campus_region: "region_sede".into(),
            career_name: "nomb_carrera".into(),
            career_area: "area_conocimiento".into(),
            degree_level: "nivel_carrera".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncomeMode {
    /// Income column holds a non-negative monetary amount.
    Continuous,
    /// Income column holds a bracket code (looked up in `income_brackets`)
    /// or a literal `lo-hi` range; the bracket midpoint is used.
    Bracket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub secondary_columns: SecondaryColumns,
    pub enrollment_columns: EnrollmentColumns,
    pub regions: Vec<RegionCode>,
    pub year_min: i32,
    pub year_max: i32,
    pub score_min: f64,
    pub score_max: f64,
    pub gpa_min: f64,
    pub gpa_max: f64,
    pub income_mode: IncomeMode,
    pub income_brackets: BTreeMap<String, [f64; 2]>,
    pub allow_duplicates: bool,
    /// Tie-break order among same-year enrollments.
    pub degree_priority: Vec<DegreeLevel>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            secondary_columns: SecondaryColumns::default(),
            enrollment_columns: EnrollmentColumns::default(),
            regions: (1..=16).collect(),
            year_min: 2005,
            year_max: 2030,
            score_min: 0.0,
            score_max: 1000.0,
            gpa_min: 1.0,
            gpa_max: 7.0,
            income_mode: IncomeMode::Continuous,
            income_brackets: BTreeMap::new(),
            allow_duplicates: false,
            degree_priority: vec![DegreeLevel::Professional, DegreeLevel::Technical],
        }
    }
}

/// Records accepted from one file together with its rejects.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
    pub raw_rows: usize,
}

enum RowError {
    Reject(RejectReason),
    Fatal(IngestError),
}

impl From<RejectReason> for RowError {
    fn from(r: RejectReason) -> Self {
        RowError::Reject(r)
    }
}

struct HeaderIndex {
    file: String,
    index: HashMap<String, usize>,
}

impl HeaderIndex {
    fn new(file: &str, headers: &csv::StringRecord) -> Self {
        let index = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        Self {
            file: file.to_string(),
            index,
        }
    }

    fn column(&self, name: &str) -> Result<usize, IngestError> {
        self.index.get(name).copied().ok_or_else(|| IngestError::MissingColumn {
            file: self.file.clone(),
            column: name.to_string(),
        })
    }
}

fn field(row: &csv::StringRecord, idx: usize) -> Result<&str, RowError> {
    row.get(idx)
        .map(str::trim)
        .ok_or(RowError::Reject(RejectReason::MalformedRow))
}

fn required(row: &csv::StringRecord, idx: usize) -> Result<&str, RowError> {
    let v = field(row, idx)?;
    if v.is_empty() {
        Err(RejectReason::MissingField.into())
    } else {
        Ok(v)
    }
}

fn parse_year(s: &str, cfg: &IngestConfig) -> Result<i32, RowError> {
    let y: i32 = s.parse().map_err(|_| RejectReason::ParseError)?;
    if y < cfg.year_min || y > cfg.year_max {
        return Err(RejectReason::YearOutOfWindow.into());
    }
    Ok(y)
}

fn parse_region(s: &str, cfg: &IngestConfig) -> Result<RegionCode, RowError> {
    let r: RegionCode = s.parse().map_err(|_| RejectReason::ParseError)?;
    if !cfg.regions.contains(&r) {
        return Err(RejectReason::RegionUnknown.into());
    }
    Ok(r)
}

fn parse_bounded(s: &str, lo: f64, hi: f64) -> Result<Option<f64>, RowError> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| RejectReason::ParseError)?;
    if !v.is_finite() {
        return Err(RejectReason::ParseError.into());
    }
    if v < lo || v > hi {
        return Err(RejectReason::OutOfRange.into());
    }
    Ok(Some(v))
}

fn parse_income(s: &str, cfg: &IngestConfig) -> Result<Option<f64>, RowError> {
    if s.is_empty() {
        return Ok(None);
    }
    match cfg.income_mode {
        IncomeMode::Continuous => parse_bounded(s, 0.0, f64::INFINITY),
        IncomeMode::Bracket => {
            if let Some([lo, hi]) = cfg.income_brackets.get(s) {
                return Ok(Some(0.5 * (lo + hi)));
            }
            let (lo, hi) = s.split_once('-').ok_or(RejectReason::ParseError)?;
            let lo: f64 = lo.trim().parse().map_err(|_| RejectReason::ParseError)?;
            let hi: f64 = hi.trim().parse().map_err(|_| RejectReason::ParseError)?;
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
                return Err(RejectReason::OutOfRange.into());
            }
            Ok(Some(0.5 * (lo + hi)))
        }
    }
}

fn raw_row(row: &csv::StringRecord) -> String {
    row.iter().collect::<Vec<_>>().join(",")
}

/// Shared CSV loop: maps every row through `parse`, collecting rejects.
fn load_rows<R, T, F>(reader: R, file: &str, mut parse: F, columns: &[&str]) -> Result<Loaded<T>, IngestError>
where
    R: Read,
    F: FnMut(&csv::StringRecord, &[usize], u64) -> Result<T, RowError>,
{
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|source| IngestError::Csv {
            file: file.to_string(),
            source,
        })?
        .clone();
    let header = HeaderIndex::new(file, &headers);
    let idx = columns
        .iter()
        .map(|c| header.column(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut raw_rows = 0;
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                raw_rows += 1;
                let line = row.position().map_or(0, |p| p.line());
                match parse(&row, &idx, line) {
                    Ok(rec) => records.push(rec),
                    Err(RowError::Fatal(err)) => return Err(err),
                    Err(RowError::Reject(reason)) => rejects.push(Reject {
                        file: file.to_string(),
                        line,
                        reason,
                        raw_row: raw_row(&row),
                    }),
                }
            }
            Err(err) => {
                // Invalid UTF-8 and similar per-row faults are non-fatal.
                if let csv::ErrorKind::Io(_) = err.kind() {
                    return Err(IngestError::Csv {
                        file: file.to_string(),
                        source: err,
                    });
                }
                raw_rows += 1;
                let line = err.position().map_or(0, |p| p.line());
                rejects.push(Reject {
                    file: file.to_string(),
                    line,
                    reason: RejectReason::ParseError,
                    raw_row: String::new(),
                });
            }
        }
    }
    Ok(Loaded {
        records,
        rejects,
        raw_rows,
    })
}

/// Parse secondary records from any reader; `file` is used in reports.
pub fn read_secondary<R: Read>(
    reader: R,
    file: &str,
    cfg: &IngestConfig,
) -> Result<Loaded<SecondaryRecord>, IngestError> {
    let c = &cfg.secondary_columns;
    let columns = [
        c.student_id.as_str(),
        &c.cohort_year,
        &c.home_region,
        &c.school_id,
        &c.math_score,
        &c.reading_score,
        &c.gpa,
        &c.family_income,
    ];
    let mut seen: HashSet<(String, i32)> = HashSet::new();
    load_rows(
        reader,
        file,
        |row, idx, line| {
            let rec = SecondaryRecord {
                student_id: required(row, idx[0])?.to_string(),
                cohort_year: parse_year(required(row, idx[1])?, cfg)?,
                home_region: parse_region(required(row, idx[2])?, cfg)?,
                school_id: required(row, idx[3])?.to_string(),
                math_score: parse_bounded(field(row, idx[4])?, cfg.score_min, cfg.score_max)?,
                reading_score: parse_bounded(field(row, idx[5])?, cfg.score_min, cfg.score_max)?,
                gpa: parse_bounded(field(row, idx[6])?, cfg.gpa_min, cfg.gpa_max)?,
                family_income: parse_income(field(row, idx[7])?, cfg)?,
            };
            if seen.insert((rec.student_id.clone(), rec.cohort_year)) {
                Ok(rec)
            } else if cfg.allow_duplicates {
                Err(RejectReason::DuplicateId.into())
            } else {
                Err(RowError::Fatal(IngestError::DuplicateId {
                    file: file.to_string(),
                    line,
                    student_id: rec.student_id,
                    cohort_year: rec.cohort_year,
                }))
            }
        },
        &columns,
    )
}

pub fn read_enrollment<R: Read>(
    reader: R,
    file: &str,
    cfg: &IngestConfig,
) -> Result<Loaded<EnrollmentRecord>, IngestError> {
    let c = &cfg.enrollment_columns;
    let columns = [
        c.student_id.as_str(),
        &c.enroll_year,
        &c.institution_id,
        &c.campus_region,
        &c.career_name,
        &c.career_area,
        &c.degree_level,
    ];
    load_rows(
        reader,
        file,
        |row, idx, _line| {
            Ok(EnrollmentRecord {
                student_id: required(row, idx[0])?.to_string(),
                enroll_year: parse_year(required(row, idx[1])?, cfg)?,
                institution_id: required(row, idx[2])?.to_string(),
                campus_region: parse_region(required(row, idx[3])?, cfg)?,
                career_name: required(row, idx[4])?.to_string(),
                career_area: required(row, idx[5])?.to_string(),
                degree_level: DegreeLevel::parse(required(row, idx[6])?).ok_or(RejectReason::ParseError)?,
            })
        },
        &columns,
    )
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        file: path.display().to_string(),
        source,
    })
}

pub fn load_secondary(path: &Path, cfg: &IngestConfig) -> Result<Loaded<SecondaryRecord>, IngestError> {
    read_secondary(open(path)?, &path.display().to_string(), cfg)
}

pub fn load_enrollment(path: &Path, cfg: &IngestConfig) -> Result<Loaded<EnrollmentRecord>, IngestError> {
    read_enrollment(open(path)?, &path.display().to_string(), cfg)
}

/// Counts reported by [`join_cohort`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub trajectories: usize,
    pub matched: usize,
    pub unmatched: usize,
    /// Enrollment rows whose student has no secondary record.
    pub orphan_enrollments: usize,
    /// Trajectories that had more than one eligible enrollment.
    pub multiple_enrollments: usize,
    /// Enrollment rows dated before the student's cohort year.
    pub premature_enrollments: usize,
}

/// Attach to every secondary record its first eligible enrollment.
///
/// Eligible enrollments share the student id and are not dated before the
/// cohort year. The earliest `enroll_year` wins; ties go to the degree level
/// listed first in `degree_priority`, then to the lexicographically smallest
/// institution id, then to the remaining fields.
pub fn join_cohort(
    secondary: &[SecondaryRecord],
    enrollment: &[EnrollmentRecord],
    degree_priority: &[DegreeLevel],
) -> (Vec<StudentTrajectory>, JoinReport) {
    let mut by_student: HashMap<&str, Vec<&EnrollmentRecord>> = HashMap::new();
    for e in enrollment {
        by_student.entry(e.student_id.as_str()).or_default().push(e);
    }
    let degree_rank = |d: DegreeLevel| {
        degree_priority
            .iter()
            .position(|p| *p == d)
            .unwrap_or(degree_priority.len())
    };

    let mut report = JoinReport::default();
    let known: HashSet<&str> = secondary.iter().map(|s| s.student_id.as_str()).collect();
    report.orphan_enrollments = enrollment
        .iter()
        .filter(|e| !known.contains(e.student_id.as_str()))
        .count();

    let trajectories: Vec<StudentTrajectory> = secondary
        .iter()
        .map(|s| {
            let candidates = by_student.get(s.student_id.as_str());
            let mut eligible: Vec<&EnrollmentRecord> = Vec::new();
            for e in candidates.into_iter().flatten() {
                if e.enroll_year >= s.cohort_year {
                    eligible.push(e);
                } else {
                    report.premature_enrollments += 1;
                }
            }
            if eligible.len() > 1 {
                report.multiple_enrollments += 1;
            }
            let best = eligible.into_iter().min_by(|a, b| {
                (a.enroll_year, degree_rank(a.degree_level))
                    .cmp(&(b.enroll_year, degree_rank(b.degree_level)))
                    .then_with(|| a.institution_id.cmp(&b.institution_id))
                    .then_with(|| a.career_name.cmp(&b.career_name))
                    .then_with(|| a.career_area.cmp(&b.career_area))
                    .then_with(|| a.campus_region.cmp(&b.campus_region))
            });
            if best.is_some() {
                report.matched += 1;
            } else {
                report.unmatched += 1;
            }
            StudentTrajectory {
                secondary: s.clone(),
                enrollment: best.cloned(),
            }
        })
        .collect();
    report.trajectories = trajectories.len();
    (trajectories, report)
}

pub fn write_rejects<W: std::io::Write>(writer: W, rejects: &[Reject]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["file", "line", "reason", "raw_row"])?;
    for r in rejects {
        w.write_record([r.file.as_str(), &r.line.to_string(), &r.reason.to_string(), &r.raw_row])?;
    }
    w.flush()?;
    Ok(())
}

/// Write secondary records using the column names of `cols`.
pub fn write_secondary<W: std::io::Write>(
    writer: W,
    records: &[SecondaryRecord],
    cols: &SecondaryColumns,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        &cols.student_id,
        &cols.cohort_year,
        &cols.home_region,
        &cols.school_id,
        &cols.math_score,
        &cols.reading_score,
        &cols.gpa,
        &cols.family_income,
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.student_id.clone(),
            r.cohort_year.to_string(),
            r.home_region.to_string(),
            r.school_id.clone(),
            opt(r.math_score),
            opt(r.reading_score),
            opt(r.gpa),
            opt(r.family_income),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_enrollment<W: std::io::Write>(
    writer: W,
    records: &[EnrollmentRecord],
    cols: &EnrollmentColumns,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        &cols.student_id,
        &cols.enroll_year,
        &cols.institution_id,
        &cols.campus_region,
        &cols.career_name,
        &cols.career_area,
        &cols.degree_level,
    ])?;
    for r in records {
        w.write_record([
            r.student_id.as_str(),
            &r.enroll_year.to_string(),
            &r.institution_id,
            &r.campus_region.to_string(),
            &r.career_name,
            &r.career_area,
            r.degree_level.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEC_HEADER: &str = "mrun,agno,cod_reg_rbd,rbd,ptje_mate,ptje_clec,prom_notas,ingreso_familiar\n";
    const ENR_HEADER: &str = "mrun,cat_periodo,cod_inst,region_sede,nomb_carrera,area_conocimiento,nivel_carrera\n";

    fn sec(body: &str) -> Result<Loaded<SecondaryRecord>, IngestError> {
        let text = format!("{SEC_HEADER}{body}");
        read_secondary(text.as_bytes(), "sec.csv", &IngestConfig::default())
    }

    fn enr(body: &str) -> Loaded<EnrollmentRecord> {
        let text = format!("{ENR_HEADER}{body}");
        read_enrollment(text.as_bytes(), "enr.csv", &IngestConfig::default()).unwrap()
    }

    fn srec(id: &str, year: i32) -> SecondaryRecord {
        SecondaryRecord {
            student_id: id.into(),
            cohort_year: year,
            home_region: 5,
            school_id: "S1".into(),
            math_score: Some(500.0),
            reading_score: Some(500.0),
            gpa: Some(5.5),
            family_income: Some(1000.0),
        }
    }

    fn erec(id: &str, year: i32, inst: &str, level: DegreeLevel) -> EnrollmentRecord {
        EnrollmentRecord {
            student_id: id.into(),
            enroll_year: year,
            institution_id: inst.into(),
            campus_region: 13,
            career_name: "Medicina".into(),
            career_area: "Medicine".into(),
            degree_level: level,
        }
    }

    #[test]
    fn well_formed_rows_all_accepted() {
        let loaded = sec("a,2023,5,S1,600,610,6.1,900000\n\
                          b,2023,13,S2,500,480,5.2,450000\n\
                          c,2023,8,S3,,,,\n")
        .unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert!(loaded.rejects.is_empty());
        assert_eq!(loaded.raw_rows, 3);
        assert_eq!(loaded.records[0].student_id, "a");
        assert_eq!(loaded.records[2].gpa, None);
    }

    #[test]
    fn unparsable_score_is_rejected_not_fatal() {
        let loaded = sec("a,2023,5,S1,abc,610,6.1,900000\n\
                          b,2023,13,S2,500,480,5.2,450000\n\
                          c,2023,8,S3,550,560,5.9,100\n")
        .unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.rejects.len(), 1);
        assert_eq!(loaded.rejects[0].reason, RejectReason::ParseError);
        assert_eq!(loaded.rejects[0].line, 2);
        assert_eq!(loaded.records.len() + loaded.rejects.len(), loaded.raw_rows);
    }

    #[test]
    fn duplicate_id_in_year_is_fatal_by_default() {
        let err = sec("a,2023,5,S1,600,610,6.1,900000\n\
                       a,2023,5,S1,600,610,6.1,900000\n")
        .unwrap_err();
        assert!(matches!(err, IngestError::DuplicateId { .. }));
    }

    #[test]
    fn duplicate_id_can_be_demoted_to_reject() {
        let cfg = IngestConfig {
            allow_duplicates: true,
            ..Default::default()
        };
        let text =
            format!("{SEC_HEADER}a,2023,5,S1,600,610,6.1,1\na,2023,5,S1,600,610,6.1,2\na,2024,5,S1,600,610,6.1,3\n");
        let loaded = read_secondary(text.as_bytes(), "x", &cfg).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.rejects[0].reason, RejectReason::DuplicateId);
    }

    #[test]
    fn missing_column_is_reported() {
        let text = "mrun,agno\na,2023\n";
        let err = read_secondary(text.as_bytes(), "x", &IngestConfig::default()).unwrap_err();
        match err {
            IngestError::MissingColumn { column, .. } => assert_eq!(column, "cod_reg_rbd"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_and_window_rejects() {
        let loaded = sec("a,2023,5,S1,1200,610,6.1,1\n\
                          b,1990,5,S1,500,610,6.1,1\n\
                          c,2023,5,S1,500,610,6.1,-5\n\
                          ,2023,5,S1,500,610,6.1,1\n")
        .unwrap();
        let reasons: Vec<_> = loaded.rejects.iter().map(|r| r.reason).collect();
        assert_eq!(
            reasons,
            vec![
                RejectReason::OutOfRange,
                RejectReason::YearOutOfWindow,
                RejectReason::OutOfRange,
                RejectReason::MissingField
            ]
        );
    }

    #[test]
    fn bracket_income_uses_midpoint() {
        let mut cfg = IngestConfig {
            income_mode: IncomeMode::Bracket,
            ..Default::default()
        };
        cfg.income_brackets.insert("3".into(), [200.0, 400.0]);
        let text = format!("{SEC_HEADER}a,2023,5,S1,600,610,6.1,3\nb,2023,5,S1,600,610,6.1,100-200\n");
        let loaded = read_secondary(text.as_bytes(), "x", &cfg).unwrap();
        assert_eq!(loaded.records[0].family_income, Some(300.0));
        assert_eq!(loaded.records[1].family_income, Some(150.0));
    }

    #[test]
    fn empty_enrollment_file() {
        let loaded = enr("");
        assert!(loaded.records.is_empty());
        assert_eq!(loaded.raw_rows, 0);
    }

    #[test]
    fn one_enrollment_row() {
        let loaded = enr("a,2024,U1,13,Medicina,Medicine,Profesional\n");
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.records[0].degree_level, DegreeLevel::Professional);
        assert_eq!(loaded.records[0].campus_region, 13);
    }

    #[test]
    fn unknown_campus_region_rejected() {
        let loaded = enr("a,2024,U1,99,Medicina,Medicine,professional\n");
        assert!(loaded.records.is_empty());
        assert_eq!(loaded.rejects[0].reason, RejectReason::RegionUnknown);
    }

    #[test]
    fn quoted_fields_follow_rfc4180() {
        let loaded = enr("a,2024,U1,13,\"Ingeniería Civil, Industrial\",Engineering,professional\n");
        assert_eq!(loaded.records[0].career_name, "Ingeniería Civil, Industrial");
    }

    #[test]
    fn join_attaches_matching_enrollment() {
        let (t, rep) = join_cohort(
            &[srec("A", 2023)],
            &[erec("A", 2024, "U1", DegreeLevel::Professional)],
            &[DegreeLevel::Professional, DegreeLevel::Technical],
        );
        assert_eq!(t.len(), 1);
        assert!(t[0].enrollment.is_some());
        assert_eq!(rep.matched, 1);
    }

    #[test]
    fn join_reports_orphans() {
        let (t, rep) = join_cohort(
            &[srec("A", 2023)],
            &[erec("B", 2024, "U1", DegreeLevel::Professional)],
            &[DegreeLevel::Professional],
        );
        assert_eq!(t.len(), 1);
        assert!(t[0].enrollment.is_none());
        assert_eq!(rep.orphan_enrollments, 1);
        assert_eq!(rep.unmatched, 1);
    }

    #[test]
    fn join_earliest_enrollment_wins() {
        let (t, rep) = join_cohort(
            &[srec("A", 2022)],
            &[
                erec("A", 2024, "U0", DegreeLevel::Professional),
                erec("A", 2023, "U9", DegreeLevel::Technical),
            ],
            &[DegreeLevel::Professional, DegreeLevel::Technical],
        );
        assert_eq!(t[0].enrollment.as_ref().unwrap().enroll_year, 2023);
        assert_eq!(rep.multiple_enrollments, 1);
    }

    #[test]
    fn join_tie_break_prefers_professional_then_institution() {
        let prio = [DegreeLevel::Professional, DegreeLevel::Technical];
        let (t, _) = join_cohort(
            &[srec("A", 2023)],
            &[
                erec("A", 2023, "U0", DegreeLevel::Technical),
                erec("A", 2023, "U5", DegreeLevel::Professional),
                erec("A", 2023, "U3", DegreeLevel::Professional),
            ],
            &prio,
        );
        let e = t[0].enrollment.as_ref().unwrap();
        assert_eq!(e.degree_level, DegreeLevel::Professional);
        assert_eq!(e.institution_id, "U3");
    }

    #[test]
    fn join_ignores_enrollment_before_cohort_year() {
        let (t, rep) = join_cohort(
            &[srec("A", 2024)],
            &[erec("A", 2023, "U0", DegreeLevel::Professional)],
            &[DegreeLevel::Professional],
        );
        assert!(t[0].enrollment.is_none());
        assert_eq!(rep.premature_enrollments, 1);
    }
}
