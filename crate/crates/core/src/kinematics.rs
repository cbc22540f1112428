//! Piecewise-constant-curvature backbone model.
//!
//! Every chamber contributes one segment of arc length `l = L + t_n` that, under
//! pressure `P`, bends by `phi = c_b * P * l * s` with the heuristic stiffness
//! factor `s = (H / t) * (W / (W + 2 t_b))`. Straight chambers bend about the
//! lateral body axis `y`; helical chambers bend about that axis yawed by theta
//! about the surface normal, `a = (-sin(theta), cos(theta), 0)`, which couples
//! bending with twist about the backbone tangent `x`.
//!
//! This is a qualitative screening model, not a mechanical simulation.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignParams, Mode, ParameterBounds};
use crate::error::{Error, Result};
use crate::geometry::{self, LayoutOptions};

/// Frames are re-orthonormalized after this many segment compositions.
const REORTHONORMALIZE_EVERY: usize = 16;
const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    /// Pressure-to-curvature coefficient, rad per mm per kPa per unit stiffness.
    pub c_b: f64,
    /// Pressures of a sweep, kPa, non-negative and ascending.
    pub pressures: Vec<f64>,
    /// Points sampled per segment (at least 1).
    pub samples_per_segment: usize,
    /// Pressure used when a single mode classification is wanted, kPa.
    pub classification_pressure: f64,
    pub layout: LayoutOptions,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        KinematicsConfig {
            c_b: 7e-5,
            pressures: vec![0.0, 20.0, 40.0, 60.0],
            samples_per_segment: 8,
            classification_pressure: 40.0,
            layout: LayoutOptions::default(),
        }
    }
}

impl KinematicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_b > 0.0 && self.c_b.is_finite()) {
            return Err(Error::Config(format!("c_b = {} must be positive", self.c_b)));
        }
        if self.samples_per_segment == 0 {
            return Err(Error::Config("samples per segment must be at least 1".into()));
        }
        check_pressure(self.classification_pressure)?;
        for p in &self.pressures {
            check_pressure(*p)?;
        }
        if self.pressures.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("pressures must be ascending".into()));
        }
        Ok(())
    }
}

fn check_pressure(p: f64) -> Result<()> {
    if p.is_finite() && p >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("pressure {p} must be finite and non-negative")))
    }
}

/// `(H / t) * (W / (W + 2 t_b))`.
pub fn stiffness_factor(p: &DesignParams) -> f64 {
    (p.h / p.t) * (p.w / (p.w + 2.0 * p.t_b))
}

/// Arc length of one segment, `L + t_n`.
pub fn segment_length(p: &DesignParams) -> f64 {
    p.l + p.t_n
}

/// Bend angle of one segment at `pressure`.
pub fn bend_angle(p: &DesignParams, pressure: f64, cfg: &KinematicsConfig) -> f64 {
    cfg.c_b * pressure * segment_length(p) * stiffness_factor(p)
}

/// Rigid transform of one segment expressed in the frame at its start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub angle: f64,
}

fn bend_axis(p: &DesignParams, helical: bool) -> Vector3<f64> {
    if helical {
        let (s, c) = p.theta.to_radians().sin_cos();
        Vector3::new(-s, c, 0.0)
    } else {
        Vector3::y()
    }
}

/// Position reached after arc length `s` of a segment whose tangent turns at
/// constant rate about `axis` (total angle `phi` over length `len`).
fn arc_point(axis: &Vector3<f64>, phi: f64, len: f64, s: f64) -> Vector3<f64> {
    let x = Vector3::x();
    if phi == 0.0 {
        return x * s;
    }
    let along = axis.dot(&x);
    let perp = x - axis * along;
    let side = axis.cross(&perp);
    let angle = phi * s / len;
    let (sin_term, cos_term) = if angle.abs() < SMALL_ANGLE {
        let a2 = angle * angle;
        (s * (1.0 - a2 / 6.0), s * (angle / 2.0 - angle * a2 / 24.0))
    } else {
        (s * angle.sin() / angle, s * (1.0 - angle.cos()) / angle)
    };
    axis * (along * s) + perp * sin_term + side * cos_term
}

fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    if angle == 0.0 {
        return Matrix3::identity();
    }
    *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
}

/// Transform contributed by chamber `index` at `pressure`.
pub fn segment_transform(
    p: &DesignParams,
    index: usize,
    pressure: f64,
    cfg: &KinematicsConfig,
) -> Result<SegmentTransform> {
    if index >= p.n as usize {
        return Err(Error::Config(format!("chamber index {index} outside 0..{}", p.n)));
    }
    check_pressure(pressure)?;
    let helical = geometry::is_helical(p, index, cfg.layout);
    let axis = bend_axis(p, helical);
    let len = segment_length(p);
    let angle = bend_angle(p, pressure, cfg);
    Ok(SegmentTransform {
        rotation: rotation_about(&axis, angle),
        translation: arc_point(&axis, angle, len, len),
        axis,
        angle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pressure: f64,
    /// Backbone points starting at the origin.
    pub points: Vec<[f64; 3]>,
    /// Cumulative body frame (row-major rotation) at each point.
    pub frames: Vec<[[f64; 3]; 3]>,
    /// Index into `points` where each segment ends.
    pub segment_ends: Vec<usize>,
    /// Total backbone arc length (sum of segment lengths).
    pub arc_length: f64,
}

impl Trajectory {
    pub fn tip(&self) -> [f64; 3] {
        *self.points.last().expect("trajectories contain the origin")
    }

    pub fn tip_frame(&self) -> Matrix3<f64> {
        to_matrix(self.frames.last().expect("trajectories contain the origin"))
    }

    /// Distance of the tip from where it sits with zero pressure.
    pub fn tip_displacement(&self) -> f64 {
        let t = self.tip();
        ((t[0] - self.arc_length).powi(2) + t[1] * t[1] + t[2] * t[2]).sqrt()
    }
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn to_matrix(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

/// Gram-Schmidt on the columns; exact zeros stay exact.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = m.column(0).normalize();
    let c1 = m.column(1) - c0 * c0.dot(&m.column(1));
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Backbone of a feasible design at `pressure`, chambers composed in layout order.
pub fn backbone_trajectory(
    p: &DesignParams,
    pressure: f64,
    bounds: &ParameterBounds,
    cfg: &KinematicsConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_pressure(pressure)?;
    let report = geometry::geometric_feasibility(p, bounds);
    if !report.is_feasible() {
        return Err(Error::Infeasible(report.violations()));
    }
    let n = p.n as usize;
    let m = cfg.samples_per_segment;
    let len = segment_length(p);
    let mut points = Vec::with_capacity(n * m + 1);
    let mut frames = Vec::with_capacity(n * m + 1);
    let mut segment_ends = Vec::with_capacity(n);
    let mut rot = Matrix3::identity();
    let mut pos = Vector3::zeros();
    points.push([0.0; 3]);
    frames.push(to_rows(&rot));
    for i in 0..n {
        let seg = segment_transform(p, i, pressure, cfg)?;
        for k in 1..m {
            let s = len * k as f64 / m as f64;
            let local = arc_point(&seg.axis, seg.angle, len, s);
            let q = pos + rot * local;
            points.push([q[0], q[1], q[2]]);
            frames.push(to_rows(&(rot * rotation_about(&seg.axis, seg.angle * s / len))));
        }
        pos += rot * seg.translation;
        rot *= seg.rotation;
        if (i + 1) % REORTHONORMALIZE_EVERY == 0 {
            rot = orthonormalize(&rot);
        }
        points.push([pos[0], pos[1], pos[2]]);
        frames.push(to_rows(&rot));
        segment_ends.push(points.len() - 1);
    }
    Ok(Trajectory {
        pressure,
        points,
        frames,
        segment_ends,
        arc_length: n as f64 * len,
    })
}

/// One trajectory per configured pressure.
pub fn trajectory_sweep(
    p: &DesignParams,
    bounds: &ParameterBounds,
    cfg: &KinematicsConfig,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    cfg.pressures
        .iter()
        .map(|&pr| backbone_trajectory(p, pr, bounds, cfg))
        .collect()
}

/// Actuation mode recognised from a trajectory's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionClass {
    Bending,
    Twisting,
    Mixed,
    Degenerate,
}

impl MotionClass {
    pub fn as_str(self) -> &'static str {
        match self {
            MotionClass::Bending => "bending",
            MotionClass::Twisting => "twisting",
            MotionClass::Mixed => "mixed",
            MotionClass::Degenerate => "degenerate",
        }
    }

    /// The design mode this motion corresponds to, if any.
    pub fn mode(self) -> Option<Mode> {
        match self {
            MotionClass::Bending => Some(Mode::Bending),
            MotionClass::Twisting => Some(Mode::Twisting),
            MotionClass::Mixed => Some(Mode::Mixed),
            MotionClass::Degenerate => None,
        }
    }
}

impl std::fmt::Display for MotionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const TORSION_THRESHOLD_DEG: f64 = 5.0;
pub const BEND_THRESHOLD_DEG: f64 = 10.0;
pub const PLANARITY_THRESHOLD: f64 = 0.01;
pub const DEGENERATE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeClassification {
    pub class: MotionClass,
    /// Smallest over largest singular value of the centred point cloud.
    pub planarity: f64,
    /// Accumulated rotation about the backbone tangent, degrees.
    pub torsion_deg: f64,
    /// Bending accumulated over twist-free steps, degrees.
    pub in_plane_bend_deg: f64,
    pub tip_displacement: f64,
}

/// Rotation vector (axis times angle) of a rotation matrix.
fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Classifies a trajectory as bending, twisting, mixed or degenerate.
///
/// Between consecutive points the relative body rotation `R_k^T R_{k+1}` is
/// split into its twist about the tangent (`x` component of the rotation
/// vector) and its bend. Rules, in order: tip displacement below 1 % of the arc
/// length is degenerate; torsion of at least 5 deg together with at least 10 deg
/// of twist-free bending is mixed; torsion of at least 5 deg alone is twisting;
/// anything else (including planar curves, planarity below 0.01) is bending.
pub fn classify_mode(t: &Trajectory) -> ModeClassification {
    let n = t.points.len();
    let tip_displacement = if n > 0 { t.tip_displacement() } else { 0.0 };
    let planarity = planarity_ratio(&t.points);
    let mut torsion = 0.0;
    let mut in_plane = 0.0;
    for w in t.frames.windows(2) {
        let rel = to_matrix(&w[0]).transpose() * to_matrix(&w[1]);
        let omega = log_map(&rel);
        let twist = omega[0];
        torsion += twist;
        if twist.abs() <= 1e-9 * omega.norm() + 1e-12 {
            in_plane += (omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
        }
    }
    let torsion_deg = torsion.abs().to_degrees();
    let in_plane_bend_deg = in_plane.to_degrees();
    let class = if n < 4 || tip_displacement < DEGENERATE_FRACTION * t.arc_length {
        MotionClass::Degenerate
    } else if torsion_deg >= TORSION_THRESHOLD_DEG && in_plane_bend_deg >= BEND_THRESHOLD_DEG {
        MotionClass::Mixed
    } else if torsion_deg >= TORSION_THRESHOLD_DEG {
        MotionClass::Twisting
    } else {
        MotionClass::Bending
    };
    ModeClassification {
        class,
        planarity,
        torsion_deg,
        in_plane_bend_deg,
        tip_displacement,
    }
}

/// `sigma_min / sigma_max` of the centred point cloud (0 for fewer than two
/// distinct points).
pub fn planarity_ratio(points: &[[f64; 3]]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mut mean = Vector3::zeros();
    for p in points {
        mean += Vector3::from(*p);
    }
    mean /= n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigenvalues();
    let max = eig.max();
    if max <= 0.0 {
        return 0.0;
    }
    (eig.min().max(0.0) / max).sqrt()
}
