//! The six normalized student features.
//!
//! Individual percentiles (language, math, GPA) are mid-rank empirical CDF
//! values over the cohort year. School percentiles rank each school's median
//! subject score among the schools of the same year. Family income is
//! min-max scaled within the year. Every output lies in `[0, 1]`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::StudentTrajectory;

pub const FEATURE_COUNT: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "lang_pct",
    "math_pct",
    "gpa_pct",
    "school_lang_pct",
    "school_math_pct",
    "income_scaled",
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("non-finite score input")]
    NonFinite,
    #[error("school has no students")]
    EmptySchool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub student_id: String,
    pub cohort_year: i32,
    pub lang_pct: f64,
    pub math_pct: f64,
    pub gpa_pct: f64,
    pub school_lang_pct: f64,
    pub school_math_pct: f64,
    pub income_scaled: f64,
}

impl FeatureVector {
    pub fn values(&self) -> [f64; FEATURE_COUNT] {
        [
            self.lang_pct,
            self.math_pct,
            self.gpa_pct,
            self.school_lang_pct,
            self.school_math_pct,
            self.income_scaled,
        ]
    }
}

/// Composite school performance for one school-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchoolScore {
    pub school_id: String,
    pub cohort_year: i32,
    pub overall: f64,
    /// Competition rank within the year; 0 until [`rank_schools`] runs.
    pub rank: u32,
    pub n_students: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpaMode {
    /// Percentile over the whole cohort year.
    Cohort,
    /// Percentile within the student's school-year.
    IntraSchool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub gpa_mode: GpaMode,
    pub min_school_size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            gpa_mode: GpaMode::Cohort,
            min_school_size: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub input: usize,
    pub retained: usize,
    pub missing_math: usize,
    pub missing_reading: usize,
    pub missing_gpa: usize,
    pub missing_income: usize,
    pub small_school: usize,
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub vectors: Vec<FeatureVector>,
    /// For each vector, the index of its source trajectory.
    pub source_index: Vec<usize>,
    pub schools: Vec<SchoolScore>,
    pub exclusions: ExclusionReport,
}

/// Mean of the math and reading scores.
pub fn student_overall_score(math: f64, reading: f64) -> Result<f64, FeatureError> {
    if !math.is_finite() || !reading.is_finite() {
        return Err(FeatureError::NonFinite);
    }
    Ok((math + reading) / 2.0)
}

pub fn school_performance(scores: &[f64]) -> Result<f64, FeatureError> {
    median(scores).ok_or(FeatureError::EmptySchool)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Competition ranking, best (highest overall) first. Ties share the
/// smallest rank; ranks are computed independently for each cohort year.
pub fn rank_schools(mut schools: Vec<SchoolScore>) -> Vec<SchoolScore> {
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, s) in schools.iter().enumerate() {
        by_year.entry(s.cohort_year).or_default().push(i);
    }
    for idx in by_year.values_mut() {
        idx.sort_by(|&a, &b| schools[b].overall.total_cmp(&schools[a].overall));
        let mut rank = 1;
        for (pos, &i) in idx.iter().enumerate() {
            if pos > 0 && schools[i].overall != schools[idx[pos - 1]].overall {
                rank = pos as u32 + 1;
            }
            schools[i].rank = rank;
        }
    }
    schools
}

/// Mid-rank empirical CDF: `(#below + 0.5 * #equal) / n` for every value.
pub fn percentile_transform(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let p = (start as f64 + 0.5 * (end - start) as f64) / n as f64;
        for &i in &order[start..end] {
            out[i] = p;
        }
        start = end;
    }
    out
}

fn minmax(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|&v| if range > 0.0 { (v - lo) / range } else { 0.5 })
        .collect()
}

/// Min-max scaling applied separately within each year. A year whose values
/// are all equal maps to 0.5.
pub fn minmax_scale_by_year(values: &[(i32, f64)]) -> Vec<f64> {
    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, (y, _)) in values.iter().enumerate() {
        groups.entry(*y).or_default().push(i);
    }
    let mut out = vec![0.0; values.len()];
    for idx in groups.values() {
        let vals: Vec<f64> = idx.iter().map(|&i| values[i].1).collect();
        for (&i, s) in idx.iter().zip(minmax(&vals)) {
            out[i] = s;
        }
    }
    out
}

struct Complete<'a> {
    source: usize,
    traj: &'a StudentTrajectory,
    math: f64,
    reading: f64,
    gpa: f64,
    income: f64,
}

struct YearOutput {
    rows: Vec<(usize, FeatureVector)>,
    schools: Vec<SchoolScore>,
    small_school: usize,
}

fn build_year(students: &[Complete<'_>], cfg: &FeatureConfig) -> YearOutput {
    // school-year membership, BTreeMap for stable iteration order
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in students.iter().enumerate() {
        members.entry(s.traj.secondary.school_id.as_str()).or_default().push(i);
    }
    let year = students[0].traj.secondary.cohort_year;
    let mut small_school = 0;
    members.retain(|_, idx| {
        let keep = idx.len() >= cfg.min_school_size.max(1);
        if !keep {
            small_school += idx.len();
        }
        keep
    });
    if members.is_empty() {
        return YearOutput {
            rows: Vec::new(),
            schools: Vec::new(),
            small_school,
        };
    }

    let school_ids: Vec<&str> = members.keys().copied().collect();
    let mut school_math = Vec::with_capacity(school_ids.len());
    let mut school_read = Vec::with_capacity(school_ids.len());
    let mut schools = Vec::with_capacity(school_ids.len());
    for id in &school_ids {
        let idx = &members[id];
        let m: Vec<f64> = idx.iter().map(|&i| students[i].math).collect();
        let r: Vec<f64> = idx.iter().map(|&i| students[i].reading).collect();
        let overall: Vec<f64> = idx
            .iter()
            .map(|&i| (students[i].math + students[i].reading) / 2.0)
            .collect();
        school_math.push(median(&m).unwrap());
        school_read.push(median(&r).unwrap());
        schools.push(SchoolScore {
            school_id: id.to_string(),
            cohort_year: year,
            overall: median(&overall).unwrap(),
            rank: 0,
            n_students: idx.len(),
        });
    }
    let school_math_pct = percentile_transform(&school_math);
    let school_lang_pct = percentile_transform(&school_read);

    // retained students in original order
    let mut school_of = vec![usize::MAX; students.len()];
    for (j, id) in school_ids.iter().enumerate() {
        for &i in &members[id] {
            school_of[i] = j;
        }
    }
    let kept: Vec<usize> = (0..students.len()).filter(|&i| school_of[i] != usize::MAX).collect();

    let col = |f: fn(&Complete<'_>) -> f64| -> Vec<f64> { kept.iter().map(|&i| f(&students[i])).collect() };
    let lang = percentile_transform(&col(|s| s.reading));
    let math = percentile_transform(&col(|s| s.math));
    let income = minmax(&col(|s| s.income));
    let gpa = match cfg.gpa_mode {
        GpaMode::Cohort => percentile_transform(&col(|s| s.gpa)),
        GpaMode::IntraSchool => {
            let mut out = vec![0.0; kept.len()];
            let pos: HashMap<usize, usize> = kept.iter().enumerate().map(|(p, &i)| (i, p)).collect();
            for id in &school_ids {
                let idx = &members[id];
                let g: Vec<f64> = idx.iter().map(|&i| students[i].gpa).collect();
                for (&i, p) in idx.iter().zip(percentile_transform(&g)) {
                    out[pos[&i]] = p;
                }
            }
            out
        }
    };

    let rows = kept
        .iter()
        .enumerate()
        .map(|(p, &i)| {
            let s = &students[i];
            let j = school_of[i];
            (
                s.source,
                FeatureVector {
                    student_id: s.traj.secondary.student_id.clone(),
                    cohort_year: year,
                    lang_pct: lang[p],
                    math_pct: math[p],
                    gpa_pct: gpa[p],
                    school_lang_pct: school_lang_pct[j],
                    school_math_pct: school_math_pct[j],
                    income_scaled: income[p],
                },
            )
        })
        .collect();
    YearOutput {
        rows,
        schools,
        small_school,
    }
}

/// Build feature vectors for every trajectory with complete inputs.
///
/// Output order follows the input order. Students missing any score or
/// income are excluded and counted (a student missing several fields is
/// counted once per missing field).
pub fn build_features(trajectories: &[StudentTrajectory], cfg: &FeatureConfig) -> FeatureSet {
    let mut exclusions = ExclusionReport {
        input: trajectories.len(),
        ..Default::default()
    };
    let mut by_year: BTreeMap<i32, Vec<Complete<'_>>> = BTreeMap::new();
    for (source, traj) in trajectories.iter().enumerate() {
        let s = &traj.secondary;
        if s.math_score.is_none() {
            exclusions.missing_math += 1;
        }
        if s.reading_score.is_none() {
            exclusions.missing_reading += 1;
        }
        if s.gpa.is_none() {
            exclusions.missing_gpa += 1;
        }
        if s.family_income.is_none() {
            exclusions.missing_income += 1;
        }
        if let (Some(math), Some(reading), Some(gpa), Some(income)) =
            (s.math_score, s.reading_score, s.gpa, s.family_income)
        {
            by_year.entry(s.cohort_year).or_default().push(Complete {
                source,
                traj,
                math,
                reading,
                gpa,
                income,
            });
        }
    }

    let years: Vec<YearOutput> = by_year
        .into_par_iter()
        .map(|(_, students)| build_year(&students, cfg))
        .collect();

    let mut rows = Vec::new();
    let mut schools = Vec::new();
    for y in years {
        exclusions.small_school += y.small_school;
        rows.extend(y.rows);
        schools.extend(y.schools);
    }
    rows.sort_by_key(|(source, _)| *source);
    exclusions.retained = rows.len();
    let (source_index, vectors) = rows.into_iter().unzip();
    FeatureSet {
        vectors,
        source_index,
        schools: rank_schools(schools),
        exclusions,
    }
}

/// Format with 9 significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-6..=15).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn write_features<W: std::io::Write>(writer: W, vectors: &[FeatureVector]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["student_id", "cohort_year"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for v in vectors {
        let mut row = vec![v.student_id.clone(), v.cohort_year.to_string()];
        row.extend(v.values().iter().map(|&x| sig9(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schools<W: std::io::Write>(writer: W, schools: &[SchoolScore]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["school_id", "year", "sp", "rank", "n_students"])?;
    for s in schools {
        w.write_record([
            s.school_id.clone(),
            s.cohort_year.to_string(),
            sig9(s.overall),
            s.rank.to_string(),
            s.n_students.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
