use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A schedule's cost and orientation-normalised quality (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub cost: f64,
    pub quality: f64,
}

impl ParetoPoint {
    pub fn new(label: impl Into<String>, cost: f64, quality: f64) -> Self {
        Self {
            label: label.into(),
            cost,
            quality,
        }
    }
}

/// Points not dominated by any cheaper-or-equal, better-or-equal point,
/// sorted by cost. Of exact duplicates only the first survives.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p.cost
            .total_cmp(&q.cost)
            .then(q.quality.total_cmp(&p.quality))
            .then(a.cmp(&b))
    });
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for i in order {
        if points[i].quality > best {
            best = points[i].quality;
            out.push(points[i].clone());
        }
    }
    out
}

pub fn write_pareto_csv<W: Write>(out: W, points: &[ParetoPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["schedule", "cost", "quality"])?;
    for p in points {
        w.write_record([p.label.clone(), p.cost.to_string(), p.quality.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
