//! Run manifests and tabular report writers.
//!
//! Every artifact is CSV or JSON. Manifests record the resolved
//! configuration, its hash and the content hash of every file read or
//! written, so a table can be traced back to the exact inputs behind it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{DistanceTable, InfoLossMatrix, PositionKind, SweepRow};
use crate::attention::RangeSweep;
use crate::error::{Error, Result};
use crate::probes::{CrossEvalEntry, ProbeParams, ProbeReportRow};
use crate::repr::Category;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hex SHA-256 of a value's canonical JSON (object keys sorted).
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    // serde_json's default map is ordered, which makes this canonical
    let value = serde_json::to_value(config)?;
    let text = serde_json::to_string(&value)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seeds: BTreeMap<String, u64>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: TOOLKIT_VERSION.to_string(),
            wall_clock_seconds: 0.0,
        })
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Writes a header and rows of already formatted cells.
fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let header = strings(&[
        "layer",
        "category",
        "position_kind",
        "baseline_acc",
        "intervened_acc",
        "drop",
        "random_control_drop",
        "k_directions",
    ]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.layer.to_string(),
                r.category.map_or("random".into(), |c| c.to_string()),
                r.position_kind.to_string(),
                num(r.baseline_acc),
                num(r.intervened_acc),
                num(r.drop),
                num(r.random_control_drop),
                r.k_directions.to_string(),
            ]
        })
        .collect();
    write_table(path.as_ref(), &header, &body)
}

pub fn write_probe_report_csv(path: impl AsRef<Path>, rows: &[ProbeReportRow]) -> Result<()> {
    let header = strings(&["category", "layer", "h_v", "h_v_cond", "i_v", "u_v", "accuracy"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.category.to_string(),
                r.layer.to_string(),
                num(r.h_v),
                num(r.h_v_cond),
                num(r.i_v),
                opt_num(r.u_v),
                num(r.accuracy),
            ]
        })
        .collect();
    write_table(path.as_ref(), &header, &body)
}

/// Square cosine matrix labelled `category@layer`.
pub fn write_cosine_csv(path: impl AsRef<Path>, probes: &[ProbeParams], matrix: &Array2<f64>) -> Result<()> {
    let labels: Vec<String> = probes.iter().map(|p| format!("{}@{}", p.category, p.layer)).collect();
    let mut header = vec!["probe".to_string()];
    header.extend(labels.iter().cloned());
    let body: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut row = vec![l.clone()];
            row.extend(matrix.row(i).iter().map(|&v| num(v)));
            row
        })
        .collect();
    write_table(path.as_ref(), &header, &body)
}

pub fn write_cross_eval_csv(path: impl AsRef<Path>, rows: &[CrossEvalEntry]) -> Result<()> {
    let header = strings(&["probe_category", "set_category", "layer", "accuracy", "majority", "lemma_majority"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.probe_category.to_string(),
                r.set_category.to_string(),
                r.layer.to_string(),
                num(r.accuracy),
                num(r.majority),
                opt_num(r.lemma_majority),
            ]
        })
        .collect();
    write_table(path.as_ref(), &header, &body)
}

/// Long format: one row per populated `(intervened layer, read layer)` cell.
pub fn write_info_loss_csv(path: impl AsRef<Path>, m: &InfoLossMatrix) -> Result<()> {
    let header = strings(&[
        "probe_category",
        "position_kind",
        "intervened_layer",
        "read_layer",
        "k_directions",
        "baseline_acc",
        "intervened_acc",
        "loss",
    ]);
    let mut body = Vec::new();
    for (i, row) in m.loss.iter().enumerate() {
        for (j, loss) in row.iter().enumerate() {
            let Some(loss) = loss else { continue };
            body.push(vec![
                m.probe_category.to_string(),
                m.position_kind.to_string(),
                i.to_string(),
                j.to_string(),
                m.k_directions[i].map(|k| k.to_string()).unwrap_or_default(),
                num(m.baseline[j]),
                opt_num(m.intervened[i][j]),
                num(*loss),
            ]);
        }
    }
    write_table(path.as_ref(), &header, &body)
}

/// Attention layers are 0-based over blocks; `i` and `j` are the first and
/// last masked block.
pub fn write_range_csv(path: impl AsRef<Path>, sweeps: &[RangeSweep]) -> Result<()> {
    let header = strings(&["kind", "i", "j", "accuracy", "drop", "n"]);
    let body: Vec<Vec<String>> = sweeps
        .iter()
        .flat_map(|s| {
            s.cells.iter().map(move |c| {
                vec![
                    s.kind.to_string(),
                    c.i.to_string(),
                    c.j.to_string(),
                    num(c.accuracy),
                    num(c.drop),
                    c.n.to_string(),
                ]
            })
        })
        .collect();
    write_table(path.as_ref(), &header, &body)
}

/// Drop matrices keyed by mask kind.
pub fn range_json(sweeps: &[RangeSweep]) -> BTreeMap<String, Vec<Vec<Option<f64>>>> {
    sweeps.iter().map(|s| (s.kind.to_string(), s.drop_matrix())).collect()
}

/// Long format: one row per (condition, column, distance). `drop` is
/// measured against the table's unintervened `none` column.
pub fn write_distance_csv(path: impl AsRef<Path>, tables: &[(String, &DistanceTable)]) -> Result<()> {
    let header = strings(&["condition", "column", "distance", "n", "accuracy", "drop"]);
    let mut body = Vec::new();
    for (condition, table) in tables {
        for (c, label) in table.columns.iter().enumerate() {
            for &dist in &table.distances {
                let Some(bucket) = table.cell(dist, c) else { continue };
                body.push(vec![
                    condition.clone(),
                    label.clone(),
                    dist.to_string(),
                    bucket.n.to_string(),
                    num(bucket.accuracy()),
                    opt_num(table.drop(dist, c)),
                ]);
            }
        }
    }
    write_table(path.as_ref(), &header, &body)
}

/// One category block of the causal-intervention summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Block {
    pub category: Category,
    pub position_kind: PositionKind,
    pub layers: Vec<usize>,
    pub directions: Vec<Option<usize>>,
    /// Same-layer probe accuracy lost to the amnesic projection.
    pub loss: Vec<Option<f64>>,
    pub loss_random: Vec<Option<f64>>,
    pub na_drop: Vec<Option<f64>>,
    pub na_drop_random: Vec<Option<f64>>,
}

pub const TABLE2_ROWS: [&str; 5] = [
    "Number of Directions",
    "Loss in Layers",
    "Loss in Layers (Random)",
    "NA Performance Drop",
    "NA Performance Drop (Random)",
];

/// Groups sweep rows by (category, position) and joins the matching
/// same-layer information losses. Random-control rows are skipped.
pub fn table2(sweeps: &[SweepRow], info: &[InfoLossMatrix], info_random: &[InfoLossMatrix]) -> Vec<Table2Block> {
    let mut groups: BTreeMap<(Category, PositionKind), Vec<&SweepRow>> = BTreeMap::new();
    for r in sweeps {
        if let Some(c) = r.category {
            groups.entry((c, r.position_kind)).or_default().push(r);
        }
    }
    let diag = |ms: &[InfoLossMatrix], c: Category, pos: PositionKind, l: usize| {
        ms.iter()
            .find(|m| m.probe_category == c && m.position_kind == pos)
            .and_then(|m| m.loss.get(l).and_then(|row| row.get(l)).copied().flatten())
    };
    groups
        .into_iter()
        .map(|((category, position_kind), rows)| {
            let n = rows.iter().map(|r| r.layer + 1).max().unwrap_or(0);
            let layers: Vec<usize> = (0..n).collect();
            let by_layer = |l: usize| rows.iter().find(|r| r.layer == l);
            Table2Block {
                category,
                position_kind,
                directions: layers.iter().map(|&l| by_layer(l).map(|r| r.k_directions)).collect(),
                loss: layers.iter().map(|&l| diag(info, category, position_kind, l)).collect(),
                loss_random: layers.iter().map(|&l| diag(info_random, category, position_kind, l)).collect(),
                na_drop: layers.iter().map(|&l| by_layer(l).map(|r| r.drop)).collect(),
                na_drop_random: layers.iter().map(|&l| by_layer(l).map(|r| r.random_control_drop)).collect(),
                layers,
            }
        })
        .collect()
}

/// Columns `block, row, <layer>…`, rows labelled as in [`TABLE2_ROWS`].
pub fn write_table2_csv(path: impl AsRef<Path>, blocks: &[Table2Block]) -> Result<()> {
    let width = blocks.iter().map(|b| b.layers.len()).max().unwrap_or(0);
    let mut header = strings(&["block", "row"]);
    header.extend((0..width).map(|l| l.to_string()));
    let mut body = Vec::new();
    for b in blocks {
        let name = format!("{}@{}", b.category, b.position_kind);
        let k: Vec<String> = b.directions.iter().map(|k| k.map(|k| k.to_string()).unwrap_or_default()).collect();
        let fmt = |xs: &[Option<f64>]| xs.iter().map(|&x| opt_num(x)).collect::<Vec<_>>();
        let rows = [k, fmt(&b.loss), fmt(&b.loss_random), fmt(&b.na_drop), fmt(&b.na_drop_random)];
        for (label, mut cells) in TABLE2_ROWS.iter().zip(rows) {
            cells.resize(width, String::new());
            let mut row = vec![name.clone(), label.to_string()];
            row.extend(cells);
            body.push(row);
        }
    }
    write_table(path.as_ref(), &header, &body)
}
