//! CSV ingestion and emission of datasets.

use std::path::Path;

use nalgebra::DMatrix;

use moe::{Dataset, Family, Outcomes};

use crate::error::{CliError, CliResult};
use crate::output::g17;

/// A parsed CSV file: header plus string cells, with the source line of every row.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub lines: Vec<u64>,
}

impl Table {
    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::input(format!("no column `{name}` (columns: {})", self.header.join(", ")))
        })
    }

    fn cell<T: std::str::FromStr>(&self, row: usize, col: usize, what: &str) -> CliResult<T> {
        let v = self.rows[row][col].trim();
        v.parse().map_err(|_| {
            CliError::input(format!(
                "row {} (line {}), column `{}`: cannot parse `{v}` as {what}",
                row + 1,
                self.lines[row],
                self.header[col]
            ))
        })
    }

    fn row_error(&self, row: usize, msg: impl std::fmt::Display) -> CliError {
        CliError::input(format!("row {} (line {}): {msg}", row + 1, self.lines[row]))
    }

    pub fn numeric_column(&self, col: usize) -> CliResult<Vec<f64>> {
        (0..self.rows.len())
            .map(|i| {
                let v: f64 = self.cell(i, col, "a number")?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(self.row_error(i, format!("column `{}` is not finite", self.header[col])))
                }
            })
            .collect()
    }

    /// Columns `prefix0`, `prefix1`, … (any start index), ordered by their number.
    fn numbered_columns(&self, prefix: &str) -> Vec<String> {
        let mut found: Vec<(usize, String)> = self
            .header
            .iter()
            .filter_map(|h| h.strip_prefix(prefix)?.parse::<usize>().ok().map(|k| (k, h.clone())))
            .collect();
        found.sort();
        found.into_iter().map(|(_, h)| h).collect()
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::input(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::input(format!("{}: malformed row {} (line {line}): {e}", path.display(), i + 1))
        })?;
        lines.push(rec.position().map(|p| p.line()).unwrap_or(i as u64 + 2));
        rows.push(rec.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows, lines })
}

/// Which columns hold what, and family details the CSV cannot carry.
#[derive(Debug, Clone, Default)]
pub struct DataSpec {
    pub response: Option<Vec<String>>,
    pub covariates: Vec<String>,
    pub trials: Option<u32>,
    pub states: Option<usize>,
    pub items: Option<usize>,
}

fn default_response(table: &Table, family: Family) -> Vec<String> {
    let has_y = table.header.iter().any(|h| h == "y");
    match family {
        Family::Gaussian if !has_y => table.numbered_columns("y"),
        Family::Gaussian | Family::GaussianRegression | Family::Binomial => vec!["y".to_string()],
        Family::Markov => table.numbered_columns("t"),
        Family::PlackettLuce => table.numbered_columns("r"),
    }
}

pub fn dataset_from_table(table: &Table, family: Family, spec: &DataSpec) -> CliResult<Dataset> {
    let response = spec.response.clone().unwrap_or_else(|| default_response(table, family));
    if response.is_empty() {
        return Err(CliError::input(format!("no response columns found for the {} family", family.name())));
    }
    let rcols = response.iter().map(|c| table.column(c)).collect::<CliResult<Vec<_>>>()?;
    let ccols = spec.covariates.iter().map(|c| table.column(c)).collect::<CliResult<Vec<_>>>()?;
    let n = table.rows.len();
    let mut xcols = Vec::with_capacity(ccols.len());
    for &c in &ccols {
        xcols.push(table.numeric_column(c)?);
    }
    let x = DMatrix::from_fn(n, ccols.len(), |i, k| xcols[k][i]);
    let ints = |c: usize| -> CliResult<Vec<usize>> { (0..n).map(|i| table.cell(i, c, "a non-negative integer")).collect() };
    let outcomes = match family {
        Family::Gaussian | Family::GaussianRegression => {
            if family == Family::GaussianRegression && rcols.len() != 1 {
                return Err(CliError::input("regression needs exactly one response column"));
            }
            let cols = rcols.iter().map(|&c| table.numeric_column(c)).collect::<CliResult<Vec<_>>>()?;
            Outcomes::Continuous(DMatrix::from_fn(n, cols.len(), |i, k| cols[k][i]))
        }
        Family::Binomial => {
            if rcols.len() != 1 {
                return Err(CliError::input("binomial needs exactly one count column"));
            }
            let trials = spec.trials.ok_or_else(|| CliError::input("binomial data need --trials"))?;
            let counts: Vec<u32> = (0..n).map(|i| table.cell(i, rcols[0], "a count")).collect::<CliResult<_>>()?;
            if let Some(i) = counts.iter().position(|&c| c > trials) {
                return Err(table.row_error(i, format!("count {} exceeds {trials} trials", counts[i])));
            }
            Outcomes::Binomial { counts, trials }
        }
        Family::Markov => {
            let cols = rcols.iter().map(|&c| ints(c)).collect::<CliResult<Vec<_>>>()?;
            let max = cols.iter().flatten().copied().max().unwrap_or(0);
            let k = spec.states.unwrap_or(max);
            let mut series = Vec::with_capacity(n);
            for i in 0..n {
                let mut s = Vec::with_capacity(cols.len());
                for col in &cols {
                    let v = col[i];
                    if v == 0 || v > k {
                        return Err(table.row_error(i, format!("state {v} outside 1..{k}")));
                    }
                    s.push(v - 1);
                }
                series.push(s);
            }
            Outcomes::Categorical { series, n_states: k }
        }
        Family::PlackettLuce => {
            let cols = rcols.iter().map(|&c| ints(c)).collect::<CliResult<Vec<_>>>()?;
            let max = cols.iter().flatten().copied().max().unwrap_or(0);
            let m = spec.items.unwrap_or(max);
            let mut ballots = Vec::with_capacity(n);
            for i in 0..n {
                let mut b: Vec<usize> = Vec::new();
                let mut ended = false;
                for col in &cols {
                    match col[i] {
                        0 => ended = true,
                        _ if ended => return Err(table.row_error(i, "candidate listed after the 0 padding")),
                        v if v > m => return Err(table.row_error(i, format!("candidate {v} outside 1..{m}"))),
                        v if b.contains(&(v - 1)) => return Err(table.row_error(i, format!("candidate {v} ranked twice"))),
                        v => b.push(v - 1),
                    }
                }
                ballots.push(b);
            }
            Outcomes::Rankings { ballots, n_items: m }
        }
    };
    Ok(Dataset::new(outcomes, x)?)
}

/// Header and rows for writing `data` back out; responses first, then covariates.
pub fn dataset_to_table(data: &Dataset, family: Family, covariates: &[String]) -> (Vec<String>, Vec<Vec<String>>) {
    let n = data.n();
    let mut header = Vec::new();
    let mut rows: Vec<Vec<String>> = vec![Vec::new(); n];
    match data.outcomes() {
        Outcomes::Continuous(y) => {
            if y.ncols() == 1 || family == Family::GaussianRegression {
                header.push("y".to_string());
            } else {
                header.extend((1..=y.ncols()).map(|k| format!("y{k}")));
            }
            for (i, r) in rows.iter_mut().enumerate() {
                r.extend(y.row(i).iter().map(|&v| g17(v)));
            }
        }
        Outcomes::Binomial { counts, .. } => {
            header.push("y".to_string());
            for (r, c) in rows.iter_mut().zip(counts) {
                r.push(c.to_string());
            }
        }
        Outcomes::Categorical { series, .. } => {
            let len = series.first().map_or(0, Vec::len);
            header.extend((0..len).map(|t| format!("t{t}")));
            for (r, s) in rows.iter_mut().zip(series) {
                r.extend(s.iter().map(|v| (v + 1).to_string()));
            }
        }
        Outcomes::Rankings { ballots, n_items } => {
            header.extend((1..=*n_items).map(|k| format!("r{k}")));
            for (r, b) in rows.iter_mut().zip(ballots) {
                r.extend((0..*n_items).map(|k| b.get(k).map_or(0, |v| v + 1).to_string()));
            }
        }
    }
    header.extend(covariates.iter().cloned());
    let x = data.covariates();
    for (i, r) in rows.iter_mut().enumerate() {
        r.extend(x.row(i).iter().map(|&v| g17(v)));
    }
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(header: &[&str], rows: &[&[&str]]) -> Table {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
            lines: (0..rows.len() as u64).map(|i| i + 2).collect(),
        }
    }

    #[test]
    fn rankings_are_one_based_and_padded() {
        let t = table(&["r1", "r2", "r3"], &[&["2", "1", "3"], &["3", "0", "0"]]);
        let d = dataset_from_table(&t, Family::PlackettLuce, &DataSpec::default()).unwrap();
        assert_eq!(
            d.outcomes(),
            &Outcomes::Rankings { ballots: vec![vec![1, 0, 2], vec![2]], n_items: 3 }
        );
        let (h, rows) = dataset_to_table(&d, Family::PlackettLuce, &[]);
        assert_eq!(h, vec!["r1", "r2", "r3"]);
        assert_eq!(rows[1], vec!["3", "0", "0"]);
    }

    #[test]
    fn bad_cells_name_the_row() {
        let t = table(&["y", "x"], &[&["1.0", "0"], &["oops", "1"]]);
        let spec = DataSpec { covariates: vec!["x".into()], ..Default::default() };
        let err = dataset_from_table(&t, Family::GaussianRegression, &spec).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("row 2 (line 3)"), "{err}");
        let t = table(&["t0", "t1"], &[&["1", "4"]]);
        let spec = DataSpec { states: Some(3), ..Default::default() };
        assert!(dataset_from_table(&t, Family::Markov, &spec).is_err());
    }
}
