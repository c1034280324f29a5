//! CSV ingestion.
//!
//! Header is required. Columns are `t`, `s`, `z_0..z_{p-1}`, `y_0..y_{d-1}`,
//! `l_0..l_{J-1}`, and optionally `gold` and `pred` (a machine prediction used
//! by the baseline estimators). Label, gold and prediction cells may be empty;
//! a label cell may be empty only on rows with `s = 0`. Rows are numbered from
//! 1 for the first data row.

use std::io::Write;
use std::path::Path;

use super::{Dataset, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvSchema {
    /// Number of label classes. Inferred from the largest label seen when
    /// absent (at least 2).
    pub num_classes: Option<usize>,
}

struct Layout {
    t: usize,
    s: usize,
    z: Vec<usize>,
    y: Vec<usize>,
    l: Vec<usize>,
    gold: Option<usize>,
    pred: Option<usize>,
}

fn indexed_columns(header: &csv::StringRecord, prefix: &str) -> std::result::Result<Vec<usize>, String> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(col, name)| {
            name.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|k| (k, col))
        })
        .collect();
    found.sort();
    for (expected, (k, _)) in found.iter().enumerate() {
        if *k != expected {
            return Err(format!("column {prefix}{expected} missing"));
        }
    }
    Ok(found.into_iter().map(|(_, col)| col).collect())
}

fn layout(header: &csv::StringRecord) -> std::result::Result<Layout, String> {
    let find = |name: &str| header.iter().position(|h| h == name);
    let known = |h: &str| {
        matches!(h, "t" | "s" | "gold" | "pred")
            || ["z_", "y_", "l_"]
                .iter()
                .any(|p| h.strip_prefix(p).is_some_and(|r| r.parse::<usize>().is_ok()))
    };
    if let Some(h) = header.iter().find(|h| !known(h)) {
        return Err(format!("unknown column '{h}'"));
    }
    let layout = Layout {
        t: find("t").ok_or("missing column 't'")?,
        s: find("s").ok_or("missing column 's'")?,
        z: indexed_columns(header, "z_")?,
        y: indexed_columns(header, "y_")?,
        l: indexed_columns(header, "l_")?,
        gold: find("gold"),
        pred: find("pred"),
    };
    if layout.y.is_empty() {
        return Err("no embedding columns y_0..".into());
    }
    Ok(layout)
}

fn parse_binary(cell: &str, name: &str) -> std::result::Result<u8, String> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("{name} must be 0 or 1, got '{other}'")),
    }
}

fn parse_real(cell: &str, name: &str) -> std::result::Result<f64, String> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("{name}: '{cell}' is not a finite number"))
}

fn parse_label(cell: &str, name: &str) -> std::result::Result<Option<usize>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<usize>()
        .map(Some)
        .map_err(|_| format!("{name}: '{cell}' is not a class label"))
}

pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let lay = layout(&header).map_err(|m| parse_err(0, m))?;
    let mut observations = Vec::new();
    let mut predictions = Vec::new();
    let mut any_pred = false;
    let mut max_label = 1usize;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        let err = |m: String| parse_err(row, m);
        let t = parse_binary(&record[lay.t], "t").map_err(err)?;
        let s = parse_binary(&record[lay.s], "s").map_err(err)?;
        let z = lay
            .z
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_real(&record[c], &format!("z_{k}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(err)?;
        let y_embed = lay
            .y
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_real(&record[c], &format!("y_{k}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(err)?;
        let cells = lay
            .l
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_label(&record[c], &format!("l_{k}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(err)?;
        let labels = if s == 1 {
            if cells.is_empty() {
                return Err(err("s=1 but the file has no label columns".into()));
            }
            cells
                .iter()
                .enumerate()
                .map(|(k, c)| c.ok_or_else(|| format!("s=1 but label l_{k} is empty")))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(err)?
        } else {
            if cells.iter().any(Option::is_some) {
                return Err(err("s=0 but a label cell is filled".into()));
            }
            Vec::new()
        };
        let gold = match lay.gold {
            Some(c) => parse_label(&record[c], "gold").map_err(err)?,
            None => None,
        };
        if let Some(c) = lay.pred {
            let cell = record[c].trim();
            if cell.is_empty() {
                predictions.push(f64::NAN);
            } else {
                predictions.push(parse_real(cell, "pred").map_err(err)?);
                any_pred = true;
            }
        }
        for &l in labels.iter().chain(gold.iter()) {
            if let Some(k) = schema.num_classes {
                if l >= k {
                    return Err(err(format!("label {l} outside 0..{}", k - 1)));
                }
            }
            max_label = max_label.max(l);
        }
        observations.push(Observation {
            t,
            y_embed,
            z,
            s,
            labels,
            gold,
        });
    }
    let num_classes = schema.num_classes.unwrap_or(max_label + 1);
    let mut ds = Dataset::new(observations, lay.y.len(), lay.z.len(), num_classes, lay.l.len())
        .map_err(|e| parse_err(0, e.to_string()))?;
    if any_pred {
        if let Some(row) = predictions.iter().position(|p| p.is_nan()) {
            return Err(parse_err(row + 1, "pred cell empty while others are filled".into()));
        }
        ds = ds.with_predictions(predictions)?;
    }
    Ok(ds)
}

/// Writes a dataset in the documented schema. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<String> = vec!["t".into(), "s".into()];
    header.extend((0..dataset.p).map(|k| format!("z_{k}")));
    header.extend((0..dataset.d).map(|k| format!("y_{k}")));
    header.extend((0..dataset.num_coders).map(|k| format!("l_{k}")));
    let has_gold = dataset.observations.iter().any(|o| o.gold.is_some());
    if has_gold {
        header.push("gold".into());
    }
    if dataset.predictions.is_some() {
        header.push("pred".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, o) in dataset.observations.iter().enumerate() {
        let mut cells: Vec<String> = vec![o.t.to_string(), o.s.to_string()];
        cells.extend(o.z.iter().map(|v| v.to_string()));
        cells.extend(o.y_embed.iter().map(|v| v.to_string()));
        for j in 0..dataset.num_coders {
            cells.push(o.labels.get(j).map(|l| l.to_string()).unwrap_or_default());
        }
        if has_gold {
            cells.push(o.gold.map(|g| g.to_string()).unwrap_or_default());
        }
        if let Some(p) = &dataset.predictions {
            cells.push(p[i].to_string());
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}
