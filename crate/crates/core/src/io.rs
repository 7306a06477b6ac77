//! File formats: time-series CSV, versioned graph JSON, dataset manifests.
//!
//! Graph files round-trip bit-exactly: floats are written with shortest
//! round-trip decimal representation and parsed back to the same bits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, SignedGraph, SubjectTimeSeries};
use crate::tensor::Tensor;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

// ─────────────────────────────────────────────────────────────────────
// Time-series CSV
// ─────────────────────────────────────────────────────────────────────

/// Load a time-series CSV: one row per ROI, one column per time point,
/// optional first line `# subject=<id> label=<int>`.
pub fn load_time_series(path: &Path) -> Result<SubjectTimeSeries> {
    let text = fs::read_to_string(path)?;
    parse_time_series(&text, &path.display().to_string())
}

pub fn parse_time_series(text: &str, path: &str) -> Result<SubjectTimeSeries> {
    let mut subject_id = String::new();
    let mut label = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            if !rows.is_empty() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: line_num,
                    message: "header line after data rows".into(),
                });
            }
            for field in header.split_whitespace() {
                let Some((key, value)) = field.split_once('=') else {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: line_num,
                        message: format!("malformed header field '{field}' (expected key=value)"),
                    });
                };
                match key {
                    "subject" => subject_id = value.to_string(),
                    "label" => {
                        label = Some(value.parse::<usize>().map_err(|_| Error::Parse {
                            path: path.into(),
                            line: line_num,
                            message: format!("label '{value}' is not a non-negative integer"),
                        })?)
                    }
                    other => {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: line_num,
                            message: format!("unknown header field '{other}'"),
                        })
                    }
                }
            }
            continue;
        }
        let values: Vec<f64> = trimmed
            .split(',')
            .enumerate()
            .map(|(col, field)| {
                field.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: line_num,
                    message: format!("column {}: '{}' is not a number", col + 1, field.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(w) = width {
            if values.len() != w {
                return Err(Error::Parse {
                    path: path.into(),
                    line: line_num,
                    message: format!("row has {} columns, expected {w}", values.len()),
                });
            }
        } else {
            width = Some(values.len());
        }
        rows.push(values);
    }

    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            message: "no ROI rows".into(),
        });
    }
    let series = Tensor::from_rows(&rows)?;
    if subject_id.is_empty() {
        subject_id = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".into());
    }
    SubjectTimeSeries::new(subject_id, label, series)
}

pub fn save_time_series(subject: &SubjectTimeSeries, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# subject={}", subject.subject_id));
    if let Some(label) = subject.label {
        out.push_str(&format!(" label={label}"));
    }
    out.push('\n');
    for r in 0..subject.series.rows() {
        let row: Vec<String> = subject
            .series
            .row_slice(r)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ─────────────────────────────────────────────────────────────────────
// Graph JSON
// ─────────────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    n: usize,
    features: Vec<Vec<f64>>,
    pos_edges: Vec<(usize, usize, f64)>,
    neg_edges: Vec<(usize, usize, f64)>,
    label: Option<usize>,
}

pub fn save_graph(graph: &SignedGraph, path: &Path) -> Result<()> {
    let n = graph.node_count();
    let features = (0..n).map(|r| graph.features.row_slice(r).to_vec()).collect();
    let file = GraphFile {
        version: GRAPH_FORMAT_VERSION,
        n,
        features,
        pos_edges: graph.pos_edges.iter().map(|e| (e.i, e.j, e.w)).collect(),
        neg_edges: graph.neg_edges.iter().map(|e| (e.i, e.j, e.w)).collect(),
        label: graph.label,
    };
    let mut f = fs::File::create(path)?;
    serde_json::to_writer(&mut f, &file)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<SignedGraph> {
    let text = fs::read_to_string(path)?;
    parse_graph(&text, &path.display().to_string())
}

pub fn parse_graph(text: &str, path: &str) -> Result<SignedGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.version != GRAPH_FORMAT_VERSION {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!(
                "unknown version {} (expected {GRAPH_FORMAT_VERSION})",
                file.version
            ),
        });
    }
    if file.features.len() != file.n {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("n={} but {} feature rows", file.n, file.features.len()),
        });
    }
    let features = Tensor::from_rows(&file.features)?;
    let check = |edges: &[(usize, usize, f64)], sign: &str| -> Result<Vec<Edge>> {
        edges
            .iter()
            .map(|&(i, j, w)| {
                if i >= j || j >= file.n {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: 1,
                        message: format!("{sign} edge ({i},{j}) invalid for n={}", file.n),
                    });
                }
                if !(w > 0.0 && w <= 1.0) {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: 1,
                        message: format!("{sign} edge ({i},{j}) weight {w} outside (0,1]"),
                    });
                }
                Ok(Edge { i, j, w })
            })
            .collect()
    };
    Ok(SignedGraph {
        features,
        pos_edges: check(&file.pos_edges, "positive")?,
        neg_edges: check(&file.neg_edges, "negative")?,
        label: file.label,
    })
}

// ─────────────────────────────────────────────────────────────────────
// Dataset manifest
// ─────────────────────────────────────────────────────────────────────

/// One manifest entry: a graph file plus its class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Write `path<TAB>label` lines.
pub fn save_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\n", e.path.display(), e.label));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a manifest; relative graph paths are resolved against the manifest's
/// directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((p, label)) = trimmed.rsplit_once('\t') else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: "expected '<path>\\t<label>'".into(),
            });
        };
        let label = label.trim().parse::<usize>().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: format!("label '{label}' is not a non-negative integer"),
        })?;
        let graph_path = base.join(p);
        entries.push(ManifestEntry {
            path: graph_path,
            label,
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: "manifest has no entries".into(),
        });
    }
    Ok(entries)
}

/// Load every graph named by a manifest, validating stored labels against
/// the manifest's.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SignedGraph>> {
    let entries = load_manifest(manifest_path)?;
    let mut graphs = Vec::with_capacity(entries.len());
    for e in &entries {
        let mut g = load_graph(&e.path)?;
        if let Some(stored) = g.label {
            if stored != e.label {
                return Err(Error::InvalidInput(format!(
                    "{}: stored label {stored} disagrees with manifest label {}",
                    e.path.display(),
                    e.label
                )));
            }
        }
        g.label = Some(e.label);
        graphs.push(g);
    }
    Ok(graphs)
}
