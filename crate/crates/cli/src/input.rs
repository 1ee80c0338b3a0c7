//! Panel ingestion from wide or long CSV.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use csv::StringRecord;
use qebd_core::model::BinaryPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Auto,
    Wide,
    Long,
}

/// A panel plus any extra numeric columns, stored cluster-major with one
/// value per (cluster, node).
#[derive(Debug, Clone)]
pub struct PanelData {
    pub panel: BinaryPanel,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl PanelData {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

pub struct ReadOptions {
    pub format: Format,
    /// Leading response columns of a wide file; all columns when absent.
    pub responses: Option<usize>,
    /// Replicate to keep from a long file with a `replicate` column.
    pub replicate: Option<String>,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_binary(path: &Path, record: &StringRecord, col: usize) -> Result<u8> {
    match record.get(col) {
        Some("0") => Ok(0),
        Some("1") => Ok(1),
        other => bail!(
            "{}:{}:{}: expected 0 or 1, found '{}'",
            path.display(),
            line_of(record),
            col + 1,
            other.unwrap_or("")
        ),
    }
}

fn parse_number(path: &Path, record: &StringRecord, col: usize) -> Result<f64> {
    let raw = record.get(col).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| anyhow!("{}:{}:{}: expected a number, found '{raw}'", path.display(), line_of(record), col + 1))
}

pub fn read_panel(path: &Path, opts: &ReadOptions) -> Result<PanelData> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().with_context(|| format!("{}: cannot read header", path.display()))?.clone();
    let has = |name: &str| headers.iter().any(|h| h == name);
    let long = match opts.format {
        Format::Long => true,
        Format::Wide => false,
        Format::Auto => has("cluster") && has("node") && has("y"),
    };
    let records: Vec<StringRecord> = rdr
        .records()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{}: malformed CSV", path.display()))?;
    if records.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    if long {
        read_long(path, &headers, &records, opts.replicate.as_deref())
    } else {
        read_wide(path, &headers, &records, opts.responses)
    }
}

fn read_wide(path: &Path, headers: &StringRecord, records: &[StringRecord], responses: Option<usize>) -> Result<PanelData> {
    let m = responses.unwrap_or(headers.len());
    if m == 0 || m > headers.len() {
        bail!("{}: {} response columns requested but the file has {}", path.display(), m, headers.len());
    }
    let n = records.len();
    let names: Vec<String> = headers.iter().take(m).map(String::from).collect();
    let mut y = Vec::with_capacity(n * m);
    for rec in records {
        for j in 0..m {
            y.push(parse_binary(path, rec, j)?);
        }
    }
    let panel = BinaryPanel::new(m, y)?.with_node_names(names)?;

    // Extra columns are node-specific when named `base_1 .. base_m`,
    // otherwise cluster-level and repeated for every node.
    let extra: Vec<(usize, &str)> = headers.iter().enumerate().skip(m).collect();
    let lookup: HashMap<&str, usize> = extra.iter().map(|&(i, h)| (h, i)).collect();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut used = vec![false; headers.len()];
    for &(i, h) in &extra {
        if used[i] {
            continue;
        }
        let node_cols: Option<Vec<usize>> = h
            .strip_suffix("_1")
            .and_then(|base| (1..=m).map(|j| lookup.get(format!("{base}_{j}").as_str()).copied()).collect());
        let (name, cols) = match node_cols {
            Some(cols) if m > 1 => (h.strip_suffix("_1").expect("suffix checked").to_string(), cols),
            _ => (h.to_string(), vec![i; m]),
        };
        let mut values = Vec::with_capacity(n * m);
        for rec in records {
            for &c in &cols {
                values.push(parse_number(path, rec, c)?);
            }
        }
        for &c in &cols {
            used[c] = true;
        }
        columns.push((name, values));
    }
    Ok(PanelData { panel, columns })
}

fn node_label(raw: &str) -> String {
    match raw.parse::<u64>() {
        Ok(v) => format!("Y{v}"),
        Err(_) => raw.to_string(),
    }
}

fn read_long(path: &Path, headers: &StringRecord, records: &[StringRecord], replicate: Option<&str>) -> Result<PanelData> {
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (c_cluster, c_node, c_y) = match (col("cluster"), col("node"), col("y")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => bail!("{}: long format needs cluster, node and y columns", path.display()),
    };
    let c_rep = col("replicate");
    let records: Vec<&StringRecord> = match (c_rep, replicate) {
        (Some(c), Some(want)) => records.iter().filter(|r| r.get(c) == Some(want)).collect(),
        (Some(c), None) => {
            let first = records[0].get(c);
            if records.iter().any(|r| r.get(c) != first) {
                bail!("{}: several replicates present; choose one with --replicate", path.display());
            }
            records.iter().collect()
        }
        (None, Some(_)) => bail!("{}: --replicate given but the file has no replicate column", path.display()),
        (None, None) => records.iter().collect(),
    };
    if records.is_empty() {
        bail!("{}: no rows for the requested replicate", path.display());
    }
    let extra: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != c_cluster && i != c_node && i != c_y && Some(i) != c_rep)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut cluster_index: HashMap<&str, usize> = HashMap::new();
    let mut clusters: Vec<Vec<&StringRecord>> = Vec::new();
    for rec in &records {
        let id = rec.get(c_cluster).unwrap_or("");
        let k = *cluster_index.entry(id).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[k].push(rec);
    }
    let nodes: Vec<&str> = clusters[0].iter().map(|r| r.get(c_node).unwrap_or("")).collect();
    let m = nodes.len();
    let node_pos: HashMap<&str, usize> = nodes.iter().enumerate().map(|(j, &id)| (id, j)).collect();
    if node_pos.len() != m {
        bail!("{}: first cluster lists a node twice", path.display());
    }
    let n = clusters.len();
    let mut y = vec![0u8; n * m];
    let mut values = vec![vec![0.0; n * m]; extra.len()];
    for (k, rows) in clusters.iter().enumerate() {
        let cluster_id = rows[0].get(c_cluster).unwrap_or("");
        if rows.len() != m {
            bail!("{}: cluster '{cluster_id}' has {} rows, expected {m}", path.display(), rows.len());
        }
        let mut seen = vec![false; m];
        for rec in rows {
            let node = rec.get(c_node).unwrap_or("");
            let j = *node_pos.get(node).ok_or_else(|| {
                anyhow!("{}:{}:{}: unknown node '{node}'", path.display(), line_of(rec), c_node + 1)
            })?;
            if std::mem::replace(&mut seen[j], true) {
                bail!("{}:{}: node '{node}' repeated in cluster '{cluster_id}'", path.display(), line_of(rec));
            }
            y[k * m + j] = parse_binary(path, rec, c_y)?;
            for (e, (c, _)) in extra.iter().enumerate() {
                values[e][k * m + j] = parse_number(path, rec, *c)?;
            }
        }
    }
    let names = nodes.iter().map(|s| node_label(s)).collect();
    let panel = BinaryPanel::new(m, y)?.with_node_names(names)?;
    let columns = extra.into_iter().map(|(_, h)| h).zip(values).collect();
    Ok(PanelData { panel, columns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn opts() -> ReadOptions {
        ReadOptions { format: Format::Auto, responses: None, replicate: None }
    }

    #[test]
    fn wide_and_long_agree() {
        let wide = temp("a,b,x_1,x_2,s\n1,0,0.5,1.5,2\n0,0,-1,0,3\n");
        let long = temp("# comment\ncluster,node,y,x,s\n7,a,1,0.5,2\n7,b,0,1.5,2\n9,b,0,0,3\n9,a,0,-1,3\n");
        let w = read_panel(wide.path(), &ReadOptions { responses: Some(2), ..opts() }).unwrap();
        let l = read_panel(long.path(), &opts()).unwrap();
        assert_eq!(w.panel, l.panel);
        assert_eq!(w.column("x"), Some(&[0.5, 1.5, -1.0, 0.0][..]));
        assert_eq!(w.columns, l.columns);
    }

    #[test]
    fn errors_carry_line_and_column() {
        let f = temp("a,b\n1,0\n0,2\n");
        let err = read_panel(f.path(), &opts()).unwrap_err().to_string();
        assert!(err.ends_with(":3:2: expected 0 or 1, found '2'"), "{err}");
        let f = temp("cluster,node,y\n1,1,1\n1,2,0\n2,1,1\n");
        assert!(read_panel(f.path(), &opts()).unwrap_err().to_string().contains("has 1 rows"));
    }

    #[test]
    fn replicate_selection() {
        let f = temp("replicate,cluster,node,y\n1,1,1,1\n1,1,2,0\n2,1,1,0\n2,1,2,0\n");
        assert!(read_panel(f.path(), &opts()).is_err());
        let d = read_panel(f.path(), &ReadOptions { replicate: Some("2".into()), ..opts() }).unwrap();
        assert_eq!(d.panel.row(0), &[0, 0]);
        assert_eq!(d.panel.node_names(), ["Y1", "Y2"]);
    }
}
