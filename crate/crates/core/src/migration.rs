//! Cross-regional migration indicator, grouped rate tables and
//! region-to-region flow matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RegionCode;

#[derive(Debug, Error, PartialEq)]
pub enum MigrationError {
    #[error("unknown region code {0}")]
    UnknownRegion(RegionCode),
    #[error("unknown grouping key `{0}`")]
    UnknownGroupKey(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub student_id: String,
    pub home_region: RegionCode,
    pub campus_region: RegionCode,
    pub migrated: bool,
    pub cluster_label: String,
    pub career_area: String,
    pub enroll_year: i32,
}

/// True when the campus lies outside the home region.
pub fn migration_flag(home: RegionCode, campus: RegionCode, regions: &[RegionCode]) -> Result<bool, MigrationError> {
    for r in [home, campus] {
        if !regions.contains(&r) {
            return Err(MigrationError::UnknownRegion(r));
        }
    }
    Ok(home != campus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Cluster,
    CareerArea,
    HomeRegion,
    EnrollYear,
}

impl GroupKey {
    pub fn parse(s: &str) -> Result<Self, MigrationError> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "cluster" => Ok(GroupKey::Cluster),
            "career" | "career_area" => Ok(GroupKey::CareerArea),
            "region" | "home_region" => Ok(GroupKey::HomeRegion),
            "year" | "enroll_year" => Ok(GroupKey::EnrollYear),
            other => Err(MigrationError::UnknownGroupKey(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Cluster => "cluster",
            GroupKey::CareerArea => "career_area",
            GroupKey::HomeRegion => "home_region",
            GroupKey::EnrollYear => "enroll_year",
        }
    }

    fn value(self, r: &MigrationRecord) -> KeyValue {
        match self {
            GroupKey::Cluster => KeyValue::Text(r.cluster_label.clone()),
            GroupKey::CareerArea => KeyValue::Text(r.career_area.clone()),
            GroupKey::HomeRegion => KeyValue::Int(r.home_region.into()),
            GroupKey::EnrollYear => KeyValue::Int(r.enroll_year.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeyValue {
    Int(i64),
    Text(String),
}

impl fmt::Display for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyValue::Int(v) => write!(f, "{v}"),
            KeyValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub keys: Vec<KeyValue>,
    pub numerator: u64,
    pub denominator: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub group_by: Vec<GroupKey>,
    pub min_cell: u64,
    pub rows: Vec<RateRow>,
    /// Groups withheld because their denominator is below `min_cell`.
    pub suppressed: Vec<Vec<KeyValue>>,
}

type Counts = BTreeMap<Vec<KeyValue>, (u64, u64)>;

fn merge(mut a: Counts, b: Counts) -> Counts {
    for (k, (num, den)) in b {
        let e = a.entry(k).or_insert((0, 0));
        e.0 += num;
        e.1 += den;
    }
    a
}

/// Exact migrant counts per group. Integer counts make the parallel merge
/// order-independent.
pub fn migration_rates(records: &[MigrationRecord], group_by: &[GroupKey], min_cell: u64) -> RateTable {
    let counts: Counts = records
        .par_chunks(4096)
        .map(|chunk| {
            let mut c = Counts::new();
            for r in chunk {
                let key: Vec<KeyValue> = group_by.iter().map(|g| g.value(r)).collect();
                let e = c.entry(key).or_insert((0, 0));
                e.0 += u64::from(r.migrated);
                e.1 += 1;
            }
            c
        })
        .reduce(Counts::new, merge);

    let mut rows = Vec::new();
    let mut suppressed = Vec::new();
    for (keys, (numerator, denominator)) in counts {
        if denominator < min_cell.max(1) {
            suppressed.push(keys);
        } else {
            rows.push(RateRow {
                keys,
                numerator,
                denominator,
                rate: numerator as f64 / denominator as f64,
            });
        }
    }
    RateTable {
        group_by: group_by.to_vec(),
        min_cell,
        rows,
        suppressed,
    }
}

/// Drop records whose home region is the metropolitan code.
pub fn exclude_metropolitan(records: Vec<MigrationRecord>, metro: RegionCode) -> (Vec<MigrationRecord>, usize) {
    let before = records.len();
    let kept: Vec<MigrationRecord> = records.into_iter().filter(|r| r.home_region != metro).collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Home-to-campus flow counts. Rows are home regions ordered by descending
/// out-migration rate (ties by region code); columns are every region seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationMatrix {
    pub rows: Vec<RegionCode>,
    pub columns: Vec<RegionCode>,
    pub counts: Vec<Vec<u64>>,
    pub out_rate: Vec<f64>,
}

impl MigrationMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn migration_matrix(records: &[MigrationRecord], career: Option<&str>) -> MigrationMatrix {
    let selected: Vec<&MigrationRecord> = records
        .iter()
        .filter(|r| career.is_none_or(|c| r.career_area.eq_ignore_ascii_case(c)))
        .collect();
    let mut flows: BTreeMap<(RegionCode, RegionCode), u64> = BTreeMap::new();
    let mut columns = BTreeSet::new();
    for r in &selected {
        *flows.entry((r.home_region, r.campus_region)).or_default() += 1;
        columns.insert(r.home_region);
        columns.insert(r.campus_region);
    }
    let columns: Vec<RegionCode> = columns.into_iter().collect();
    let col_index: BTreeMap<RegionCode, usize> = columns.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let mut by_home: BTreeMap<RegionCode, Vec<u64>> = BTreeMap::new();
    for (&(home, campus), &n) in &flows {
        by_home.entry(home).or_insert_with(|| vec![0; columns.len()])[col_index[&campus]] += n;
    }
    let mut rows: Vec<(RegionCode, Vec<u64>, f64)> = by_home
        .into_iter()
        .map(|(home, counts)| {
            let total: u64 = counts.iter().sum();
            let stay = counts[col_index[&home]];
            let rate = (total - stay) as f64 / total as f64;
            (home, counts, rate)
        })
        .collect();
    rows.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    MigrationMatrix {
        rows: rows.iter().map(|r| r.0).collect(),
        out_rate: rows.iter().map(|r| r.2).collect(),
        counts: rows.into_iter().map(|r| r.1).collect(),
        columns,
    }
}

pub fn write_rate_table<W: std::io::Write>(writer: W, table: &RateTable) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = table.group_by.iter().map(|g| g.name()).collect();
    header.extend(["migrants", "students", "rate"]);
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec: Vec<String> = row.keys.iter().map(ToString::to_string).collect();
        rec.push(row.numerator.to_string());
        rec.push(row.denominator.to_string());
        rec.push(crate::features::sig9(row.rate));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix<W: std::io::Write>(writer: W, m: &MigrationMatrix) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["home_region".to_string(), "out_rate".to_string()];
    header.extend(m.columns.iter().map(|c| format!("to_{c}")));
    w.write_record(&header)?;
    for ((home, counts), rate) in m.rows.iter().zip(&m.counts).zip(&m.out_rate) {
        let mut rec = vec![home.to_string(), crate::features::sig9(*rate)];
        rec.extend(counts.iter().map(ToString::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(home: RegionCode, campus: RegionCode, cluster: &str) -> MigrationRecord {
        MigrationRecord {
            student_id: format!("{home}-{campus}-{cluster}"),
            home_region: home,
            campus_region: campus,
            migrated: home != campus,
            cluster_label: cluster.into(),
            career_area: "Medicine".into(),
            enroll_year: 2024,
        }
    }

    #[test]
    fn flag() {
        let regions: Vec<RegionCode> = (1..=16).collect();
        assert_eq!(migration_flag(5, 5, &regions), Ok(false));
        assert_eq!(migration_flag(5, 13, &regions), Ok(true));
        assert_eq!(migration_flag(5, 99, &regions), Err(MigrationError::UnknownRegion(99)));
    }

    #[test]
    fn single_group_rate() {
        let r = vec![rec(5, 13, "A"), rec(5, 5, "A"), rec(5, 5, "A"), rec(5, 5, "A")];
        let t = migration_rates(&r, &[GroupKey::Cluster], 1);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].rate, 0.25);
        let global = migration_rates(&r, &[], 1);
        assert_eq!(global.rows.len(), 1);
        assert!(global.rows[0].keys.is_empty());
    }

    #[test]
    fn small_cells_are_suppressed() {
        let mut r: Vec<_> = (0..12).map(|_| rec(5, 5, "big")).collect();
        r.push(rec(5, 13, "tiny"));
        let t = migration_rates(&r, &[GroupKey::Cluster], 10);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.suppressed, vec![vec![KeyValue::Text("tiny".into())]]);
        let mut buf = Vec::new();
        write_rate_table(&mut buf, &t).unwrap();
        assert!(!String::from_utf8(buf).unwrap().contains("tiny"));
    }

    #[test]
    fn metropolitan_exclusion() {
        let all_metro = vec![rec(13, 13, "A"), rec(13, 5, "A")];
        let (kept, removed) = exclude_metropolitan(all_metro, 13);
        assert!(kept.is_empty());
        assert_eq!(removed, 2);

        let none = vec![rec(5, 13, "A"), rec(7, 7, "A")];
        let (kept, removed) = exclude_metropolitan(none.clone(), 13);
        assert_eq!(kept, none);
        assert_eq!(removed, 0);

        let mixed = vec![
            rec(5, 5, "A"),
            rec(13, 5, "A"),
            rec(8, 13, "A"),
            rec(13, 13, "A"),
            rec(2, 2, "A"),
        ];
        let (kept, removed) = exclude_metropolitan(mixed, 13);
        assert_eq!(kept.len(), 3);
        assert_eq!(removed, 2);
    }

    #[test]
    fn matrix_single_record() {
        let m = migration_matrix(&[rec(5, 13, "A")], None);
        assert_eq!(m.total(), 1);
        let nonzero = m.counts.iter().flatten().filter(|&&c| c > 0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn matrix_diagonal_only() {
        let r = vec![rec(5, 5, "A"), rec(7, 7, "A"), rec(7, 7, "A")];
        let m = migration_matrix(&r, None);
        for (i, home) in m.rows.iter().enumerate() {
            for (j, col) in m.columns.iter().enumerate() {
                if home != col {
                    assert_eq!(m.counts[i][j], 0);
                }
            }
        }
        assert!(m.out_rate.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn matrix_rows_ordered_and_conserved() {
        let r = vec![
            rec(5, 5, "A"),
            rec(5, 13, "A"),
            rec(7, 13, "A"),
            rec(7, 13, "A"),
            rec(2, 2, "A"),
            rec(2, 2, "A"),
            rec(2, 2, "A"),
        ];
        let m = migration_matrix(&r, None);
        assert_eq!(m.rows, vec![7, 5, 2]);
        let sums: Vec<u64> = m.counts.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(sums, vec![2, 2, 3]);
        assert_eq!(m.total(), r.len() as u64);
        let filtered = migration_matrix(&r, Some("law"));
        assert_eq!(filtered.total(), 0);
    }
}
