//! File formats: numeric data CSV, 0/1 adjacency CSV, TSV edge lists and
//! JSON reports. Every writer goes through a temporary file in the target
//! directory followed by a rename, so readers never observe partial output.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{AdjacencyMatrix, DataMatrix};
use crate::selection::EdgeScoreMatrix;

pub const EDGE_LIST_HEADER: &str = "node_i\tnode_j\tscore\tin_prior";

/// Writes `contents` to `path` via a sibling temporary file and an atomic rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn format_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, format_json(value)?.as_bytes())
}

fn read_records(path: &Path, delimiter: u8) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

/// Reads an n×p numeric CSV. A first row in which no cell parses as a number
/// is taken as node names. With `standardize`, columns are centered and
/// scaled to unit variance.
pub fn read_data_csv(path: &Path, standardize: bool) -> Result<DataMatrix> {
    let mut rows = read_records(path, b',')?;
    if rows.is_empty() {
        return Err(Error::parse(path, "empty data file"));
    }
    let names = if rows[0].iter().all(|c| c.parse::<f64>().is_err()) {
        Some(rows.remove(0))
    } else {
        None
    };
    let p = names.as_ref().map_or_else(|| rows.first().map_or(0, Vec::len), Vec::len);
    if rows.is_empty() {
        return Err(Error::parse(path, "no data rows"));
    }
    let mut values = Vec::with_capacity(rows.len() * p);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != p {
            return Err(Error::parse(
                path,
                format!("row {} has {} fields, expected {p}", r + 1, row.len()),
            ));
        }
        for (c, cell) in row.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, format!("non-numeric cell {cell:?} at row {}, column {}", r + 1, c + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, format!("non-finite value at row {}, column {}", r + 1, c + 1)));
            }
            values.push(v);
        }
    }
    let matrix = DMatrix::from_row_slice(rows.len(), p, &values);
    let mut data = DataMatrix::new(matrix).map_err(|e| Error::parse(path, e.to_string()))?;
    if let Some(names) = names {
        data = data.with_names(names)?;
    }
    if standardize {
        data = data.standardized().map_err(|e| Error::parse(path, e.to_string()))?;
    }
    Ok(data)
}

pub fn write_data_csv(data: &DataMatrix, path: &Path) -> Result<()> {
    write_atomic(path, format_data_csv(data).as_bytes())
}

/// Values use the shortest representation that parses back to the same f64.
pub fn format_data_csv(data: &DataMatrix) -> String {
    let mut out = String::new();
    if let Some(names) = data.names() {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for row in data.values().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads a p×p CSV of 0/1 values and validates symmetry and an empty diagonal.
pub fn read_adjacency_csv(path: &Path, p: usize) -> Result<AdjacencyMatrix> {
    parse_adjacency(path, read_records(path, b',')?, p)
}

/// Like [`read_adjacency_csv`], taking p from the number of rows.
pub fn read_adjacency_csv_any(path: &Path) -> Result<AdjacencyMatrix> {
    let rows = read_records(path, b',')?;
    let p = rows.len();
    parse_adjacency(path, rows, p)
}

fn parse_adjacency(path: &Path, rows: Vec<Vec<String>>, p: usize) -> Result<AdjacencyMatrix> {
    if rows.len() != p {
        return Err(Error::parse(path, format!("expected {p} rows, found {}", rows.len())));
    }
    let mut values = Vec::with_capacity(p * p);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != p {
            return Err(Error::parse(
                path,
                format!("row {} has {} fields, expected {p}", i + 1, row.len()),
            ));
        }
        for (j, cell) in row.iter().enumerate() {
            let v = match cell.as_str() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::parse(
                        path,
                        format!("entry ({}, {}) = {other:?} is not 0 or 1", i + 1, j + 1),
                    ))
                }
            };
            values.push(v);
        }
    }
    for i in 0..p {
        if values[i * p + i] != 0 {
            return Err(Error::parse(path, format!("diagonal entry ({0}, {0}) must be 0", i + 1)));
        }
        for j in (i + 1)..p {
            if values[i * p + j] != values[j * p + i] {
                return Err(Error::parse(path, format!("asymmetric entry at ({}, {})", i + 1, j + 1)));
            }
        }
    }
    AdjacencyMatrix::from_dense(p, &values).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_adjacency_csv(adj: &AdjacencyMatrix, path: &Path) -> Result<()> {
    write_atomic(path, format_adjacency_csv(adj).as_bytes())
}

pub fn format_adjacency_csv(adj: &AdjacencyMatrix) -> String {
    let p = adj.p();
    let dense = adj.to_dense();
    let mut out = String::with_capacity(2 * p * p);
    for i in 0..p {
        let row: Vec<&str> = dense[i * p..(i + 1) * p]
            .iter()
            .map(|&v| if v == 1 { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Renders the edge list: one row per unordered pair, descending score,
/// ties in lexicographic pair order, scores with six decimals.
pub fn format_edge_list(
    scores: &EdgeScoreMatrix,
    prior: &AdjacencyMatrix,
    labels: &[String],
) -> Result<String> {
    if !scores.is_symmetrized() {
        return Err(Error::InvalidArgument("edge list needs symmetrized scores".into()));
    }
    if prior.p() != scores.p() || labels.len() != scores.p() {
        return Err(Error::Dimension("scores, prior and labels disagree on p".into()));
    }
    let mut out = String::from(EDGE_LIST_HEADER);
    out.push('\n');
    for ((i, j), score) in scores.ranked_pairs() {
        out.push_str(&format!(
            "{}\t{}\t{score:.6}\t{}\n",
            labels[i],
            labels[j],
            u8::from(prior.has_edge(i, j))
        ));
    }
    Ok(out)
}

pub fn write_edge_list(
    scores: &EdgeScoreMatrix,
    prior: &AdjacencyMatrix,
    labels: &[String],
    path: &Path,
) -> Result<()> {
    let text = format_edge_list(scores, prior, labels)?;
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub i: usize,
    pub j: usize,
    pub score: f64,
    pub in_prior: bool,
}

/// Reads an edge list back, in file order. Node labels are resolved against
/// `labels`; entries are (i, j) with i < j.
pub fn read_edge_list(path: &Path, labels: &[String]) -> Result<Vec<EdgeRow>> {
    let rows = read_records(path, b'\t')?;
    let Some((header, body)) = rows.split_first() else {
        return Err(Error::parse(path, "empty edge list"));
    };
    if header.join("\t") != EDGE_LIST_HEADER {
        return Err(Error::parse(path, format!("unexpected header {:?}", header.join("\t"))));
    }
    let lookup = |label: &str, line: usize| {
        labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::parse(path, format!("unknown node {label:?} on line {line}")))
    };
    body.iter()
        .enumerate()
        .map(|(n, row)| {
            let line = n + 2;
            if row.len() != 4 {
                return Err(Error::parse(path, format!("line {line} has {} fields", row.len())));
            }
            let (a, b) = (lookup(&row[0], line)?, lookup(&row[1], line)?);
            let score = row[2]
                .parse::<f64>()
                .map_err(|_| Error::parse(path, format!("bad score on line {line}")))?;
            let in_prior = match row[3].as_str() {
                "0" => false,
                "1" => true,
                _ => return Err(Error::parse(path, format!("bad in_prior flag on line {line}"))),
            };
            Ok(EdgeRow {
                i: a.min(b),
                j: a.max(b),
                score,
                in_prior,
            })
        })
        .collect()
}

/// Symmetric score matrix from edge-list rows.
pub fn edge_rows_to_scores(p: usize, rows: &[EdgeRow]) -> Result<EdgeScoreMatrix> {
    let pairs: Vec<_> = rows.iter().map(|r| ((r.i, r.j), r.score)).collect();
    EdgeScoreMatrix::from_pairs(p, &pairs)
}

pub fn format_csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv_table(header: &[&str], rows: &[Vec<String>], path: &Path) -> Result<()> {
    write_atomic(path, format_csv_table(header, rows).as_bytes())
}
