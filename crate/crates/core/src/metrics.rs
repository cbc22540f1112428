//! Novelty and diversity of generated design sets.
//!
//! Novelty is the mean Euclidean distance from each generated row to its
//! nearest training row. Diversity compares the areas of the 2-D convex hulls
//! enclosing generated and training points in an embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::util::{pairwise_sum, squared_distance};

/// Representation the distances were measured in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceSpace {
    /// Standardized, one-hot encoded features.
    #[default]
    Encoded,
    /// 2-D t-SNE coordinates.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    /// Mean over generated rows of the nearest-training distance.
    pub d_new: f64,
    pub per_sample: Vec<f64>,
    /// Index of the nearest training row for every generated row.
    pub nearest_training: Vec<usize>,
    pub space: DistanceSpace,
}

/// Exact nearest-training-row distance for every generated row.
pub fn novelty(
    generated: &FeatureMatrix,
    training: &FeatureMatrix,
    space: DistanceSpace,
) -> Result<NoveltyReport> {
    if generated.is_empty() || training.is_empty() {
        return Err(Error::Data("novelty needs non-empty generated and training sets".into()));
    }
    if generated.ncols() != training.ncols() {
        return Err(Error::DimensionMismatch {
            expected: training.ncols(),
            actual: generated.ncols(),
        });
    }
    let mut per_sample = Vec::with_capacity(generated.nrows());
    let mut nearest_training = Vec::with_capacity(generated.nrows());
    for g in generated.rows() {
        let (best, d2) = training
            .rows()
            .enumerate()
            .map(|(j, t)| (j, squared_distance(g, t)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        per_sample.push(d2.sqrt());
        nearest_training.push(best);
    }
    let d_new = pairwise_sum(&per_sample) / per_sample.len() as f64;
    Ok(NoveltyReport {
        d_new,
        per_sample,
        nearest_training,
        space,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullReport {
    /// Hull vertices in counter-clockwise order, starting at the lowest-x
    /// (then lowest-y) point. Collinear boundary points are omitted.
    pub vertices: Vec<[f64; 2]>,
    pub area: f64,
    /// Number of input points (before de-duplication).
    pub point_count: usize,
    /// Fewer than three distinct points, or all points collinear.
    pub degenerate: bool,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon, taken relative to its first vertex.
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let o = vertices[0];
    let terms: Vec<f64> = vertices[1..]
        .windows(2)
        .map(|w| cross(o, w[0], w[1]))
        .collect();
    0.5 * pairwise_sum(&terms).abs()
}

/// Andrew's monotone chain convex hull with shoelace area.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> HullReport {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return HullReport {
            vertices: pts,
            area: 0.0,
            point_count: points.len(),
            degenerate: true,
        };
    }

    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        // every point on one line: report the two extremes
        return HullReport {
            vertices: vec![pts[0], pts[pts.len() - 1]],
            area: 0.0,
            point_count: points.len(),
            degenerate: true,
        };
    }
    let area = polygon_area(&hull);
    HullReport {
        vertices: hull,
        area,
        point_count: points.len(),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub area_generated: f64,
    pub area_training: f64,
    /// `area_generated / area_training`; `None` when either hull is degenerate.
    pub area_ratio: Option<f64>,
    pub hull_generated: HullReport,
    pub hull_training: HullReport,
}

/// Convex-hull areas of generated and training embeddings and their ratio.
pub fn diversity_report(generated: &[[f64; 2]], training: &[[f64; 2]]) -> DiversityReport {
    let hull_generated = convex_hull_2d(generated);
    let hull_training = convex_hull_2d(training);
    let area_ratio = if hull_generated.degenerate || hull_training.degenerate {
        None
    } else {
        Some(hull_generated.area / hull_training.area)
    };
    DiversityReport {
        area_generated: hull_generated.area,
        area_training: hull_training.area,
        area_ratio,
        hull_generated,
        hull_training,
    }
}

/// Mean silhouette coefficient of a labelled point set (Euclidean distances).
///
/// Points in singleton clusters contribute 0. Returns `None` with fewer than two
/// distinct labels.
pub fn silhouette_score(points: &FeatureMatrix, labels: &[usize]) -> Result<Option<f64>> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    let n_labels = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_labels];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|s| **s > 0).count() < 2 {
        return Ok(None);
    }
    let mut scores = Vec::with_capacity(n);
    let mut sums = vec![0.0; n_labels];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += squared_distance(points.row(i), points.row(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] < 2 {
            scores.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_labels)
            .filter(|&l| l != own && sizes[l] > 0)
            .map(|l| sums[l] / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        scores.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    Ok(Some(pairwise_sum(&scores) / n as f64))
}
