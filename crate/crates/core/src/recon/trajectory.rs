use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contrastive::{Level, PriorPair};
use crate::encoder::QualityResponse;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub psnr: f64,
    pub ssim: f64,
    pub tenengrad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub dc_loss: f64,
    pub reg_loss: f64,
    /// Unit-norm embeddings keyed by level name.
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub quality: Option<QualityResponse>,
    #[serde(default)]
    pub metrics: Option<MetricSnapshot>,
}

impl TrajectoryRecord {
    pub fn embedding(&self, level: Level) -> Option<&[f64]> {
        self.embeddings.get(level.name()).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn push(&mut self, record: TrajectoryRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::State(format!(
                    "trajectory iteration {} does not follow {}",
                    record.iteration, last.iteration
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("records serialize");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut log = TrajectoryLog::default();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrajectoryRecord =
                serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            log.push(rec).map_err(|e| Error::format(path, e.to_string()))?;
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Positive,
    Negative,
    Trajectory,
}

/// One projected point: prior members carry their index as `id`,
/// trajectory points their record index and iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub kind: PointKind,
    pub id: usize,
    pub iteration: Option<usize>,
    pub x: f64,
    pub y: f64,
}

/// Top-two principal axes of `rows`, each flipped so its largest-magnitude
/// component is positive. Returns the mean and the axes.
pub fn pca2(rows: &[Vec<f64>]) -> Result<(Vec<f64>, [Vec<f64>; 2])> {
    if rows.len() < 3 {
        return Err(Error::invalid(format!("projection needs at least 3 embeddings, got {}", rows.len())));
    }
    let d = rows[0].len();
    if d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::dim("embeddings must share a dimension of at least 2"));
    }
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        if k >= order.len() {
            return vec![0.0; d];
        }
        let mut v: Vec<f64> = vt.row(order[k]).iter().copied().collect();
        let big = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok((mean, [axis(0), axis(1)]))
}

/// PCA fitted on the prior members at `level`; projects the members and
/// every logged embedding at that level.
pub fn project_trajectory(log: &TrajectoryLog, prior: &PriorPair, level: Level) -> Result<Vec<ProjectedPoint>> {
    if log.is_empty() {
        return Err(Error::invalid("trajectory log is empty"));
    }
    let fit: Vec<Vec<f64>> = prior.positives.iter().chain(&prior.negatives).cloned().collect();
    let (mean, axes) = pca2(&fit)?;
    let proj = |v: &[f64]| -> Result<(f64, f64)> {
        if v.len() != mean.len() {
            return Err(Error::dim("embedding dimension differs from the prior"));
        }
        let c: Vec<f64> = v.iter().zip(&mean).map(|(a, m)| a - m).collect();
        let dot = |a: &[f64]| c.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
        Ok((dot(&axes[0]), dot(&axes[1])))
    };
    let mut out = Vec::new();
    for (kind, set) in [(PointKind::Positive, &prior.positives), (PointKind::Negative, &prior.negatives)] {
        for (i, v) in set.iter().enumerate() {
            let (x, y) = proj(v)?;
            out.push(ProjectedPoint { kind, id: i, iteration: None, x, y });
        }
    }
    for (i, r) in log.records.iter().enumerate() {
        let e = r
            .embedding(level)
            .ok_or_else(|| Error::invalid(format!("trajectory has no {} embeddings", level.name())))?;
        let (x, y) = proj(e)?;
        out.push(ProjectedPoint {
            kind: PointKind::Trajectory,
            id: i,
            iteration: Some(r.iteration),
            x,
            y,
        });
    }
    Ok(out)
}

pub fn write_projection_csv(path: &Path, points: &[ProjectedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_projection_csv(path: &Path) -> Result<Vec<ProjectedPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .map(|p| p.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
