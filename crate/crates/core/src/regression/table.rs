use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{build_design, DesignSpec, ScalingMode, COVARIATE_NAMES};
use super::logit::{LogitFit, LogitOptions};
use super::RegressionError;
use crate::clustering::Archetype;

/// Significance cut-offs for one, two and three stars.
pub const STAR_THRESHOLDS: [f64; 3] = [0.1, 0.05, 0.01];

pub fn stars(p_value: f64) -> &'static str {
    if p_value < STAR_THRESHOLDS[2] {
        "***"
    } else if p_value < STAR_THRESHOLDS[1] {
        "**"
    } else if p_value < STAR_THRESHOLDS[0] {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub model_id: u8,
    pub fit: Option<LogitFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub entries: Vec<LadderEntry>,
    pub n_observations: usize,
    pub baseline: String,
    /// How covariates were scaled, recorded for the run metadata.
    pub scaling: String,
}

/// Fit each requested model. A failing model is recorded and the rest
/// still run.
pub fn model_ladder(
    features: &[[f64; 6]],
    clusters: &[String],
    migrated: &[bool],
    models: &[u8],
    baseline: &str,
    scaling: &ScalingMode,
    options: &LogitOptions,
) -> Result<Ladder, RegressionError> {
    // labels outside the archetype set (k != 7) become their own levels
    let custom_levels = clusters.iter().any(|c| Archetype::from_name(c).is_none());
    let mut levels: Vec<String> = clusters.to_vec();
    levels.sort();
    levels.dedup();
    let specs = models
        .iter()
        .map(|&m| {
            DesignSpec::model(m, baseline).map(|s| {
                let s = s.with_scaling(scaling.clone());
                if custom_levels {
                    s.with_levels(levels.clone())
                } else {
                    s
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let entries = specs
        .par_iter()
        .map(|spec| {
            let result = build_design(features, clusters, migrated, spec).and_then(|d| d.fit(options));
            match result {
                Ok(fit) => LadderEntry {
                    model_id: spec.model_id,
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => LadderEntry {
                    model_id: spec.model_id,
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let scaling = match scaling {
        ScalingMode::MinMaxSample => "covariates min-max scaled on the estimation sample",
        ScalingMode::MinMaxBounds(_) => "covariates min-max scaled with supplied bounds",
        ScalingMode::Identity => "covariates unscaled",
    };
    Ok(Ladder {
        entries,
        n_observations: features.len(),
        baseline: baseline.to_string(),
        scaling: scaling.to_string(),
    })
}

fn row_order(name: &str) -> (u8, usize, String) {
    if let Some(i) = COVARIATE_NAMES.iter().position(|c| *c == name) {
        (0, i, String::new())
    } else if name.contains('×') {
        (1, name.matches('×').count(), name.to_string())
    } else {
        (2, 0, name.to_string())
    }
}

impl Ladder {
    /// Coefficient rows in display order, intercept excluded.
    pub fn row_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| e.fit.as_ref())
            .flat_map(|f| f.names.iter().cloned())
            .filter(|n| n != "Intercept")
            .collect();
        names.sort_by_key(|n| row_order(n));
        names.dedup();
        names
    }

    fn cells(&self, row: &str) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|e| {
                let Some(fit) = &e.fit else {
                    return (String::new(), String::new());
                };
                match fit.names.iter().position(|n| n == row) {
                    Some(j) => (
                        format!("{:.3}{}", fit.coefficients[j], stars(fit.p_values[j])),
                        format!("({:.3})", fit.std_errors[j]),
                    ),
                    None => (String::new(), String::new()),
                }
            })
            .collect()
    }

    fn summary_cells(&self) -> (Vec<String>, Vec<String>) {
        self.entries
            .iter()
            .map(|e| match &e.fit {
                Some(f) => (f.n_observations.to_string(), format!("{:.3}", f.pseudo_r2)),
                None => ("failed".to_string(), "failed".to_string()),
            })
            .unzip()
    }
}

/// Plain-text comparison table: a coefficient line with stars and a
/// parenthesized standard error beneath each row.
pub fn render_text(ladder: &Ladder) -> String {
    let rows = ladder.row_names();
    let label_w = rows
        .iter()
        .map(|r| r.chars().count())
        .chain(["Observations".len(), "Pseudo R2".len()])
        .max()
        .unwrap_or(0)
        + 2;
    let col_w = 14;
    let total_w = label_w + col_w * ladder.entries.len();
    let rule = "=".repeat(total_w);
    let thin = "-".repeat(total_w);
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
    let cell = |s: &str| format!("{s:>col_w$}");

    let mut out = String::new();
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(
        out,
        "{}{}",
        pad("", label_w),
        ladder
            .entries
            .iter()
            .map(|e| cell(&format!("Model {}", e.model_id)))
            .collect::<String>()
    );
    let _ = writeln!(
        out,
        "{}{}",
        pad("", label_w),
        ladder
            .entries
            .iter()
            .map(|e| cell(&format!("({})", e.model_id)))
            .collect::<String>()
    );
    let _ = writeln!(out, "{thin}");
    for row in &rows {
        let cells = ladder.cells(row);
        let _ = writeln!(
            out,
            "{}{}",
            pad(row, label_w),
            cells.iter().map(|c| cell(&c.0)).collect::<String>()
        );
        let _ = writeln!(
            out,
            "{}{}",
            pad("", label_w),
            cells.iter().map(|c| cell(&c.1)).collect::<String>()
        );
    }
    let _ = writeln!(out, "{thin}");
    let (obs, r2) = ladder.summary_cells();
    let _ = writeln!(
        out,
        "{}{}",
        pad("Observations", label_w),
        obs.iter().map(|c| cell(c)).collect::<String>()
    );
    let _ = writeln!(
        out,
        "{}{}",
        pad("Pseudo R2", label_w),
        r2.iter().map(|c| cell(c)).collect::<String>()
    );
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "Note: *p<0.1; **p<0.05; ***p<0.01");
    let _ = writeln!(out, "Baseline cluster: {}; {}", ladder.baseline, ladder.scaling);
    for e in &ladder.entries {
        if let Some(err) = &e.error {
            let _ = writeln!(out, "Model {} failed: {err}", e.model_id);
        }
    }
    out
}

/// CSV comparison table with one `coef` and one `se` line per row.
pub fn render_csv(ladder: &Ladder) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["term".to_string(), "stat".to_string()];
    header.extend(ladder.entries.iter().map(|e| format!("model_{}", e.model_id)));
    let _ = w.write_record(&header);
    for row in ladder.row_names() {
        let cells = ladder.cells(&row);
        let mut coef = vec![row.clone(), "coef".to_string()];
        coef.extend(cells.iter().map(|c| c.0.clone()));
        let mut se = vec![row.clone(), "se".to_string()];
        se.extend(cells.iter().map(|c| c.1.clone()));
        let _ = w.write_record(&coef);
        let _ = w.write_record(&se);
    }
    let (obs, r2) = ladder.summary_cells();
    let mut o = vec!["Observations".to_string(), String::new()];
    o.extend(obs);
    let mut r = vec!["Pseudo R2".to_string(), String::new()];
    r.extend(r2);
    let _ = w.write_record(&o);
    let _ = w.write_record(&r);
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}
