use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "strategy,scorer,round,repeat,labeled_fraction,test_accuracy";
pub const SUMMARY_HEADER: &str = "strategy,scorer,round,repeats,labeled_fraction,mean_accuracy,std_accuracy";
pub const INDEPENDENT_HEADER: &str = "strategy,scorer,round,repeat,client,test_accuracy";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub strategy: String,
    pub scorer: String,
    pub round: usize,
    pub repeat: usize,
    pub labeled_fraction: f64,
    pub test_accuracy: f64,
}

/// Accuracy of one client's independently trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependentRow {
    pub strategy: String,
    pub scorer: String,
    pub round: usize,
    pub repeat: usize,
    pub client: usize,
    pub test_accuracy: f64,
}

/// Mean and sample standard deviation over repeats of one
/// (strategy, scorer, round) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub scorer: String,
    pub round: usize,
    pub repeats: usize,
    pub labeled_fraction: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    rows: Vec<ResultRow>,
    independent: Vec<IndependentRow>,
}

fn key(r: &ResultRow) -> (&str, &str, usize, usize) {
    (&r.strategy, &r.scorer, r.round, r.repeat)
}

impl ResultTable {
    pub fn new(mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by(|a, b| key(a).cmp(&key(b)));
        Self {
            rows,
            independent: Vec::new(),
        }
    }

    pub fn with_independent(mut self, mut rows: Vec<IndependentRow>) -> Self {
        rows.sort_by(|a, b| {
            (&a.strategy, &a.scorer, a.round, a.repeat, a.client).cmp(&(
                &b.strategy,
                &b.scorer,
                b.round,
                b.repeat,
                b.client,
            ))
        });
        self.independent = rows;
        self
    }

    /// Rows sorted by (strategy, scorer, round, repeat).
    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn independent(&self) -> &[IndependentRow] {
        &self.independent
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows of one (strategy, scorer) combination.
    pub fn series<'a>(&'a self, strategy: &'a str, scorer: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.strategy == strategy && r.scorer == scorer)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out: Vec<SummaryRow> = Vec::new();
        for group in self
            .rows
            .chunk_by(|a, b| (&a.strategy, &a.scorer, a.round) == (&b.strategy, &b.scorer, b.round))
        {
            let n = group.len() as f64;
            let mean = group.iter().map(|r| r.test_accuracy).sum::<f64>() / n;
            let std = if group.len() > 1 {
                let ss: f64 = group.iter().map(|r| (r.test_accuracy - mean).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            out.push(SummaryRow {
                strategy: group[0].strategy.clone(),
                scorer: group[0].scorer.clone(),
                round: group[0].round,
                repeats: group.len(),
                labeled_fraction: group.iter().map(|r| r.labeled_fraction).sum::<f64>() / n,
                mean_accuracy: mean,
                std_accuracy: std,
            });
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6}",
                r.strategy, r.scorer, r.round, r.repeat, r.labeled_fraction, r.test_accuracy
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                r.strategy, r.scorer, r.round, r.repeats, r.labeled_fraction, r.mean_accuracy, r.std_accuracy
            );
        }
        s
    }

    pub fn independent_csv(&self) -> String {
        let mut s = String::from(INDEPENDENT_HEADER);
        s.push('\n');
        for r in &self.independent {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6}",
                r.strategy, r.scorer, r.round, r.repeat, r.client, r.test_accuracy
            );
        }
        s
    }

    /// Parses the per-run CSV written by [`emit_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let path = PathBuf::from("<csv>");
        let mut lines = text.lines();
        match lines.next() {
            Some(CSV_HEADER) => {}
            other => {
                return Err(Error::Parse {
                    path,
                    record: 1,
                    reason: format!("expected header `{CSV_HEADER}`, got {other:?}"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let record = i + 2;
            let bad = |reason: String| Error::Parse {
                path: path.clone(),
                record,
                reason,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
            let real = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            rows.push(ResultRow {
                strategy: f[0].to_string(),
                scorer: f[1].to_string(),
                round: int(f[2])?,
                repeat: int(f[3])?,
                labeled_fraction: real(f[4])?,
                test_accuracy: real(f[5])?,
            });
        }
        Ok(Self::new(rows))
    }
}

/// Companion file path: `results.csv` becomes `results.<suffix>.csv`.
pub fn companion_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the per-run rows to `path`, the mean/std summary next to it as
/// `<stem>.summary.csv`, and independent-learning rows as
/// `<stem>.independent.csv` when there are any.
pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<()> {
    write(path, &table.to_csv())?;
    write(&companion_path(path, "summary"), &table.summary_csv())?;
    if !table.independent.is_empty() {
        write(&companion_path(path, "independent"), &table.independent_csv())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: &str, round: usize, repeat: usize, acc: f64) -> ResultRow {
        ResultRow {
            strategy: strategy.into(),
            scorer: "entropy".into(),
            round,
            repeat,
            labeled_fraction: 0.1 * round as f64,
            test_accuracy: acc,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(ResultTable::default().to_csv(), format!("{CSV_HEADER}\n"));
        assert!(ResultTable::from_csv(&format!("{CSV_HEADER}\n")).unwrap().is_empty());
    }

    #[test]
    fn rows_are_sorted_and_formatted() {
        let t = ResultTable::new(vec![row("s_al", 1, 2, 0.5), row("f_al", 2, 1, 0.25), row("f_al", 1, 1, 1.0 / 3.0)]);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "f_al,entropy,1,1,0.100000,0.333333");
        assert_eq!(lines[2], "f_al,entropy,2,1,0.200000,0.250000");
        assert_eq!(lines[3], "s_al,entropy,1,2,0.100000,0.500000");
    }

    #[test]
    fn csv_round_trip() {
        let t = ResultTable::new(vec![row("random", 1, 1, 0.125), row("random", 1, 2, 0.875)]);
        let parsed = ResultTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(parsed, t);
        assert!(ResultTable::from_csv("a,b\n").is_err());
        let err = ResultTable::from_csv(&format!("{CSV_HEADER}\nrandom,none,x,1,0.1,0.2\n")).unwrap_err();
        assert!(err.to_string().contains("record 2"), "{err}");
    }

    #[test]
    fn summary_is_mean_and_sample_std() {
        let t = ResultTable::new(vec![row("random", 1, 1, 0.5), row("random", 1, 2, 0.7), row("random", 2, 1, 0.9)]);
        let s = t.summary();
        assert_eq!(s.len(), 2);
        assert!((s[0].mean_accuracy - 0.6).abs() < 1e-15);
        assert!((s[0].std_accuracy - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!((s[1].repeats, s[1].std_accuracy), (1, 0.0));
    }

    #[test]
    fn companion_paths() {
        assert_eq!(companion_path(Path::new("out/res.csv"), "summary"), PathBuf::from("out/res.summary.csv"));
        assert_eq!(companion_path(Path::new("res"), "summary"), PathBuf::from("res.summary.csv"));
    }
}
