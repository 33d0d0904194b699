//! Long-format CSV for clustered data: header `cluster_id,y,x1,...,xp`, one
//! row per observation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Cluster, ClusteredDataset, ContrastFamily, ResponseKind};
use crate::error::{Error, Result};

/// Reads a clustered CSV file. See [`read_clustered`].
pub fn read_clustered_csv(
    path: impl AsRef<Path>,
    kind: Option<ResponseKind>,
) -> Result<ClusteredDataset> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    read_clustered(file, kind)
}

/// Parses clustered CSV.
///
/// Clusters appear in order of first appearance and rows keep file order
/// within a cluster. Any empty field rejects the file with its line number.
/// Without an explicit `kind`, 0/1 responses are read as [`ResponseKind::Binary01`],
/// -1/+1 as [`ResponseKind::BinaryPm1`] and everything else as continuous.
pub fn read_clustered<R: Read>(reader: R, kind: Option<ResponseKind>) -> Result<ClusteredDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "empty file".into(),
        });
    }
    if header.len() < 3 {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header cluster_id,y,x1,...,xp, found {} columns",
                header.len()
            ),
        });
    }
    let p = header.len() - 2;
    let expected = |i: usize| match i {
        0 => "cluster_id".to_string(),
        1 => "y".to_string(),
        k => format!("x{}", k - 1),
    };
    for (i, h) in header.iter().enumerate() {
        if h != expected(i) {
            return Err(Error::Parse {
                line: 1,
                message: format!("column {} is '{h}', expected '{}'", i + 1, expected(i)),
            });
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (i, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("missing value in column '{}'", &header[i]),
                });
            }
        }
        let parse = |i: usize| -> Result<f64> {
            let v: f64 = record[i].parse().map_err(|_| Error::Parse {
                line,
                message: format!("column '{}': '{}' is not a number", &header[i], &record[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column '{}': non-finite value", &header[i]),
                });
            }
            Ok(v)
        };
        let id = record[0].to_string();
        let y = parse(1)?;
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        entry.0.push(y);
        for i in 0..p {
            entry.1.push(parse(i + 2)?);
        }
    }
    if order.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let clusters: Vec<Cluster> = order
        .into_iter()
        .map(|id| {
            let (y, x) = rows.remove(&id).expect("recorded id");
            let m = y.len();
            Cluster::new(id, DVector::from_vec(y), DMatrix::from_row_slice(m, p, &x))
        })
        .collect();
    let kind = kind.unwrap_or_else(|| infer_kind(&clusters));
    let d = ClusteredDataset::new(clusters, kind, p);
    d.ensure_valid()?;
    Ok(d)
}

fn infer_kind(clusters: &[Cluster]) -> ResponseKind {
    let all = |k: ResponseKind| clusters.iter().all(|c| c.y.iter().all(|&v| k.admits(v)));
    if all(ResponseKind::Binary01) {
        ResponseKind::Binary01
    } else if all(ResponseKind::BinaryPm1) {
        ResponseKind::BinaryPm1
    } else {
        ResponseKind::Continuous
    }
}

/// Writes `d` in the format [`read_clustered`] accepts. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_clustered<W: Write>(d: &ClusteredDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster_id".to_string(), "y".to_string()];
    header.extend((1..=d.p()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for c in d.clusters() {
        for j in 0..c.size() {
            let mut rec = Vec::with_capacity(d.p() + 2);
            rec.push(c.id.clone());
            rec.push(c.y[j].to_string());
            rec.extend((0..d.p()).map(|k| c.x[(j, k)].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_clustered_csv(d: &ClusteredDataset, path: impl AsRef<Path>) -> Result<()> {
    write_clustered(d, File::create(path)?)
}

/// Parses a custom contrast family: one hypothesis per line as
/// `label,v1,...,vp`; blank lines and lines starting with `#` are skipped.
pub fn read_contrasts<R: Read>(mut reader: R) -> Result<ContrastFamily> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i as u64 + 1;
        let mut fields = line.split(',').map(str::trim);
        let label = fields.next().unwrap_or_default().to_string();
        let row = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: format!("'{f}' is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "a contrast needs coefficients".into(),
            });
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {w} coefficients, found {}", row.len()),
                })
            }
            _ => {}
        }
        labels.push(label);
        values.extend(row);
    }
    let Some(p) = width else {
        return Err(Error::Parse {
            line: 1,
            message: "no contrasts found".into(),
        });
    };
    let c = labels.len();
    ContrastFamily::custom(DMatrix::from_row_slice(c, p, &values), labels)
}

pub fn read_contrasts_file(path: impl AsRef<Path>) -> Result<ContrastFamily> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    read_contrasts(file)
}
