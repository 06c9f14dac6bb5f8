//! Artifact formats: embedding matrix text files, trajectory and sweep CSV,
//! check-report JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use negsim_core::analysis::CheckReport;
use negsim_core::{EmbeddingSet, Matrix, SimilarityStats, TrajectoryRecord};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, LabError, Result};

pub const TRAJECTORY_HEADER: [&str; 9] =
    ["step", "loss", "pos_mean", "pos_var", "neg_mean", "neg_var", "within_mean", "within_var", "grad_norm"];

pub const SWEEP_HEADER: [&str; 7] = ["axis", "value", "pos_mean", "neg_mean", "neg_var", "within_mean", "passed_checks"];

/// Twelve significant digits in scientific notation.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Header `# embeddings n=<n> d=<d> view=<u|v>`, then one space-separated
/// row per line in shortest round-trip form.
pub fn format_matrix(m: &Matrix, view: char) -> String {
    let mut s = format!("# embeddings n={} d={} view={view}\n", m.rows(), m.cols());
    for r in m.row_iter() {
        let row: Vec<String> = r.iter().map(|x| x.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_matrix(path: &Path, m: &Matrix, view: char) -> Result<()> {
    fs::write(path, format_matrix(m, view)).map_err(io_err(path))
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<(Matrix, char)> {
    let bad = |reason: String| LabError::Format { path: path.to_path_buf(), reason };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let fields: Vec<&str> = header
        .strip_prefix("# embeddings ")
        .ok_or_else(|| bad(format!("bad header `{header}`")))?
        .split_whitespace()
        .collect();
    let field = |name: &str| {
        fields
            .iter()
            .find_map(|f| f.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| bad(format!("header lacks `{name}=`")))
    };
    let n: usize = field("n")?.parse().map_err(|_| bad("bad n".into()))?;
    let d: usize = field("d")?.parse().map_err(|_| bad("bad d".into()))?;
    let view = match field("view")? {
        "u" => 'u',
        "v" => 'v',
        other => return Err(bad(format!("view must be u or v, got `{other}`"))),
    };
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|_| bad(format!("row {i}: bad value `{tok}`")))?);
        }
        if data.len() - before != d {
            return Err(bad(format!("row {i} has {} values, expected {d}", data.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(bad(format!("{rows} rows, header says {n}")));
    }
    Ok((Matrix::from_vec(n, d, data)?, view))
}

pub fn read_matrix(path: &Path) -> Result<(Matrix, char)> {
    parse_matrix(&fs::read_to_string(path).map_err(io_err(path))?, path)
}

pub fn write_embeddings(dir: &Path, stem: &str, e: &EmbeddingSet) -> Result<()> {
    write_matrix(&dir.join(format!("{stem}_u.txt")), e.u(), 'u')?;
    write_matrix(&dir.join(format!("{stem}_v.txt")), e.v(), 'v')
}

pub fn read_embeddings(dir: &Path, stem: &str) -> Result<EmbeddingSet> {
    let (u, vu) = read_matrix(&dir.join(format!("{stem}_u.txt")))?;
    let (v, vv) = read_matrix(&dir.join(format!("{stem}_v.txt")))?;
    if (vu, vv) != ('u', 'v') {
        return Err(LabError::Format { path: dir.to_path_buf(), reason: format!("views are {vu}/{vv}") });
    }
    Ok(EmbeddingSet::new(u, v)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub loss: f64,
    pub pos_mean: f64,
    pub pos_var: f64,
    pub neg_mean: f64,
    pub neg_var: f64,
    pub within_mean: f64,
    pub within_var: f64,
    pub grad_norm: f64,
}

impl From<&TrajectoryRecord> for TrajectoryRow {
    fn from(r: &TrajectoryRecord) -> Self {
        let s = r.stats;
        Self {
            step: r.step,
            loss: r.loss,
            pos_mean: s.pos_mean,
            pos_var: s.pos_var,
            neg_mean: s.neg_mean,
            neg_var: s.neg_var,
            within_mean: s.within_mean,
            within_var: s.within_var,
            grad_norm: r.tangential_grad_norm,
        }
    }
}

pub fn write_trajectory<W: Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in records {
        let row = TrajectoryRow::from(r);
        let mut fields = vec![row.step.to_string()];
        fields.extend(
            [row.loss, row.pos_mean, row.pos_var, row.neg_mean, row.neg_var, row.within_mean, row.within_var, row.grad_norm]
                .map(fmt12),
        );
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| LabError::Csv(e.into()))
}

pub fn read_trajectory<R: std::io::Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != TRAJECTORY_HEADER {
        return Err(LabError::Format { path: "<trajectory>".into(), reason: format!("header {header:?}") });
    }
    r.deserialize().map(|row| row.map_err(LabError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub pos_mean: f64,
    pub neg_mean: f64,
    pub neg_var: f64,
    pub within_mean: f64,
    /// `passed/total`, or `error` when the point aborted.
    pub passed_checks: String,
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.axis.clone(),
            r.value.to_string(),
            fmt12(r.pos_mean),
            fmt12(r.neg_mean),
            fmt12(r.neg_var),
            fmt12(r.within_mean),
            r.passed_checks.clone(),
        ])?;
    }
    w.flush().map_err(|e| LabError::Csv(e.into()))
}

pub fn read_sweep<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(LabError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub name: String,
    pub passed: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub details: String,
}

impl From<&CheckReport> for ReportJson {
    fn from(r: &CheckReport) -> Self {
        Self {
            name: r.name.clone(),
            passed: r.passed,
            lhs: r.lhs,
            rhs: r.rhs,
            margin: r.margin,
            tolerance: r.tolerance,
            details: r.details.clone(),
        }
    }
}

pub fn reports_json(reports: &[CheckReport]) -> Result<String> {
    let rows: Vec<ReportJson> = reports.iter().map(ReportJson::from).collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsJson {
    pub pos_mean: f64,
    pub pos_var: f64,
    pub neg_mean: f64,
    pub neg_var: f64,
    pub within_mean: f64,
    pub within_var: f64,
}

impl From<SimilarityStats> for StatsJson {
    fn from(s: SimilarityStats) -> Self {
        Self {
            pos_mean: s.pos_mean,
            pos_var: s.pos_var,
            neg_mean: s.neg_mean,
            neg_var: s.neg_var,
            within_mean: s.within_mean,
            within_var: s.within_var,
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use negsim_core::geometry::make_etf;

    #[test]
    fn matrix_text_round_trip() {
        let m = make_etf(5, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_matrix(&p, &m, 'v').unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# embeddings n=5 d=6 view=v\n"));
        let (back, view) = read_matrix(&p).unwrap();
        assert_eq!((back, view), (m, 'v'));
    }

    #[test]
    fn malformed_matrix_files() {
        let p = Path::new("x");
        for text in [
            "",
            "1 2\n",
            "# embeddings n=1 d=2 view=w\n1 0\n",
            "# embeddings n=2 d=2 view=u\n1 0\n",
            "# embeddings n=1 d=2 view=u\n1 0 0\n",
            "# embeddings n=1 d=2 view=u\n1 zero\n",
        ] {
            assert!(matches!(parse_matrix(text, p), Err(LabError::Format { .. })), "{text:?}");
        }
    }

    #[test]
    fn fmt12_has_twelve_digits() {
        assert_eq!(fmt12(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt12(-0.0625), "-6.25000000000e-2");
    }
}
