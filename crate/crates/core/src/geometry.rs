//! Actuator layout, feasibility screening and preview geometry.
//!
//! Coordinates are millimetres with `x` along the actuator axis (starting at
//! 0), `y` lateral (centred on 0) and `z` up from the bottom of the base slab.
//! Each chamber is a box `L x W x H` standing on the base slab; helical
//! chambers are the same box yawed by `theta` about its vertical centre line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design_space::{validate_design, DesignParams, ParameterBounds};
use crate::error::{Error, Result};
use crate::util;

/// Footprint allowance for inclined chambers, as a multiple of `W`.
pub const INCLINED_WIDTH_FACTOR: f64 = 1.5;
const STL_HEADER: &[u8] = b"pneunet preview mesh (binary STL, mm)";

/// Axis-aligned box `size` whose minimum corner sits at `origin` in its own
/// frame, yawed by `yaw_deg` about the vertical line through `pivot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPart {
    pub origin: [f64; 3],
    pub size: [f64; 3],
    pub pivot: [f64; 2],
    pub yaw_deg: f64,
}

impl BoxPart {
    fn axis_aligned(origin: [f64; 3], size: [f64; 3]) -> Self {
        BoxPart {
            origin,
            size,
            pivot: [origin[0], origin[1]],
            yaw_deg: 0.0,
        }
    }

    /// The eight corners after rotation, indexed by bits (x, y, z).
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        let mut out = [[0.0; 3]; 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let x = self.origin[0] + if i & 1 != 0 { self.size[0] } else { 0.0 };
            let y = self.origin[1] + if i & 2 != 0 { self.size[1] } else { 0.0 };
            let z = self.origin[2] + if i & 4 != 0 { self.size[2] } else { 0.0 };
            let (dx, dy) = (x - self.pivot[0], y - self.pivot[1]);
            *corner = if self.yaw_deg == 0.0 {
                [x, y, z]
            } else {
                [self.pivot[0] + c * dx - s * dy, self.pivot[1] + s * dx + c * dy, z]
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamberPlacement {
    pub index: usize,
    /// Axial position of the chamber centre.
    pub center_x: f64,
    /// In-plane orientation: 0 for straight chambers, theta for helical ones.
    pub orientation_deg: f64,
    pub helical: bool,
    pub outer: BoxPart,
    pub cavity: BoxPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirChannel {
    /// Index of the chamber before the channel; it connects to `from + 1`.
    pub from: usize,
    pub outer: BoxPart,
    /// Passage cut through the channel and the adjoining chamber walls.
    pub passage: BoxPart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLayout {
    pub chambers: Vec<ChamberPlacement>,
    pub base: BoxPart,
    pub channels: Vec<AirChannel>,
    /// Axial length covered by the chambers (equals `L_T`).
    pub axial_extent: f64,
}

impl ActuatorLayout {
    /// Solid parts that make up the preview mesh: slab, chamber shells and
    /// channel shells.
    pub fn solid_parts(&self) -> Vec<BoxPart> {
        std::iter::once(self.base)
            .chain(self.chambers.iter().map(|c| c.outer))
            .chain(self.channels.iter().map(|c| c.outer))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutOptions {
    /// Place the helical chambers before the straight ones.
    pub helical_first: bool,
}

/// Whether chamber `index` is helical under the given ordering.
pub fn is_helical(p: &DesignParams, index: usize, options: LayoutOptions) -> bool {
    let i = index as u32;
    if options.helical_first {
        i < p.n1
    } else {
        i >= p.n2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCheck {
    pub name: String,
    pub passed: bool,
    /// Signed slack of the inequality in mm (negative or zero when failing);
    /// absent for the bounds check.
    pub margin: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub checks: Vec<FeasibilityCheck>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&FeasibilityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn violations(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }
}

fn strict_check(name: &str, margin: f64, detail: String) -> FeasibilityCheck {
    FeasibilityCheck {
        name: name.to_string(),
        passed: margin > 0.0,
        margin: Some(margin),
        detail,
    }
}

/// Geometric screening of a design. Failures are data, never errors.
///
/// * `cavity_length`, `cavity_width`, `cavity_height`: the hollow interior
///   exists (`L > 2t`, `W > 2t`, `H > t_h + t_ab`).
/// * `air_channel`: the channel wall fits under the roof (`t_ab < H`).
/// * `inclined_footprint`: a chamber yawed by theta stays within
///   `1.5 W` laterally (`L sin(theta) + W cos(theta) <= 1.5 W`); straight-only
///   designs are evaluated at zero yaw.
/// * `bounds`: every parameter within bounds and dependents consistent.
pub fn geometric_feasibility(p: &DesignParams, bounds: &ParameterBounds) -> FeasibilityReport {
    let mut checks = vec![
        strict_check(
            "cavity_length",
            p.l - 2.0 * p.t,
            format!("L = {} must exceed 2t = {}", p.l, 2.0 * p.t),
        ),
        strict_check(
            "cavity_width",
            p.w - 2.0 * p.t,
            format!("W = {} must exceed 2t = {}", p.w, 2.0 * p.t),
        ),
        strict_check(
            "cavity_height",
            p.h - p.t_h - p.t_ab,
            format!("H = {} must exceed t_h + t_ab = {}", p.h, p.t_h + p.t_ab),
        ),
        strict_check(
            "air_channel",
            p.h - p.t_ab,
            format!("t_ab = {} must be below H = {}", p.t_ab, p.h),
        ),
    ];
    let yaw = if p.n1 > 0 { p.theta } else { 0.0 };
    let (s, c) = yaw.to_radians().sin_cos();
    let footprint = p.l * s + p.w * c;
    let allowed = INCLINED_WIDTH_FACTOR * p.w;
    let margin = allowed - footprint;
    checks.push(FeasibilityCheck {
        name: "inclined_footprint".into(),
        passed: margin >= 0.0,
        margin: Some(margin),
        detail: format!("footprint {footprint:.4} at {yaw} deg must not exceed {allowed:.4}"),
    });
    let validation = validate_design(p, bounds);
    checks.push(FeasibilityCheck {
        name: "bounds".into(),
        passed: validation.is_valid(),
        margin: None,
        detail: if validation.is_valid() {
            "all parameters within bounds".into()
        } else {
            validation
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        },
    });
    FeasibilityReport { checks }
}

/// Places chambers, base slab and air channels for a feasible design.
pub fn layout(p: &DesignParams, bounds: &ParameterBounds, options: LayoutOptions) -> Result<ActuatorLayout> {
    let report = geometric_feasibility(p, bounds);
    if !report.is_feasible() {
        return Err(Error::Infeasible(report.violations()));
    }
    let n = p.n as usize;
    let pitch = p.l + p.t_n;
    let half_w = p.w / 2.0;
    let cavity_h = p.h - p.t_h - p.t_ab;
    let chambers: Vec<ChamberPlacement> = (0..n)
        .map(|i| {
            let x0 = i as f64 * pitch;
            let center_x = x0 + p.l / 2.0;
            let helical = is_helical(p, i, options);
            let yaw = if helical { p.theta } else { 0.0 };
            let pivot = [center_x, 0.0];
            ChamberPlacement {
                index: i,
                center_x,
                orientation_deg: yaw,
                helical,
                outer: BoxPart {
                    origin: [x0, -half_w, p.t_b],
                    size: [p.l, p.w, p.h],
                    pivot,
                    yaw_deg: yaw,
                },
                cavity: BoxPart {
                    origin: [x0 + p.t, -half_w + p.t, p.t_b + p.t_ab],
                    size: [p.l - 2.0 * p.t, p.w - 2.0 * p.t, cavity_h],
                    pivot,
                    yaw_deg: yaw,
                },
            }
        })
        .collect();

    let passage_w = (p.w - 2.0 * p.t) / 2.0;
    let passage_h = cavity_h / 2.0;
    let channels = (0..n.saturating_sub(1))
        .map(|i| {
            let x0 = i as f64 * pitch + p.l;
            AirChannel {
                from: i,
                outer: BoxPart::axis_aligned(
                    [x0, -passage_w / 2.0 - p.t_ab, p.t_b],
                    [p.t_n, passage_w + 2.0 * p.t_ab, passage_h + 2.0 * p.t_ab],
                ),
                passage: BoxPart::axis_aligned(
                    [x0 - p.t, -passage_w / 2.0, p.t_b + p.t_ab],
                    [p.t_n + 2.0 * p.t, passage_w, passage_h],
                ),
            }
        })
        .collect();

    Ok(ActuatorLayout {
        chambers,
        base: BoxPart::axis_aligned([0.0, -half_w, 0.0], [p.l_t, p.w, p.t_b]),
        channels,
        axial_extent: p.l_t,
    })
}

/// Formats a length for the script: four decimals, trailing zeros trimmed.
fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn vec3(v: [f64; 3]) -> String {
    format!("[{}, {}, {}]", num(v[0]), num(v[1]), num(v[2]))
}

fn write_box(out: &mut String, indent: &str, b: &BoxPart) {
    if b.yaw_deg == 0.0 {
        let _ = writeln!(out, "{indent}translate({}) cube({});", vec3(b.origin), vec3(b.size));
    } else {
        let rel = [b.origin[0] - b.pivot[0], b.origin[1] - b.pivot[1], b.origin[2]];
        let _ = writeln!(
            out,
            "{indent}translate([{}, {}, 0]) rotate([0, 0, {}]) translate({}) cube({});",
            num(b.pivot[0]),
            num(b.pivot[1]),
            num(b.yaw_deg),
            vec3(rel),
            vec3(b.size)
        );
    }
}

/// OpenSCAD-style constructive solid geometry script rebuilding the actuator.
///
/// Output is a pure function of the design, suitable for golden-file tests.
pub fn export_csg_script(p: &DesignParams, bounds: &ParameterBounds, options: LayoutOptions) -> Result<String> {
    let lay = layout(p, bounds, options)?;
    let mut out = String::new();
    let _ = writeln!(out, "// Pneu-net actuator, units: mm");
    let _ = writeln!(
        out,
        "// L={} W={} H={} t={} t_n={} t_h={} t_ab={} t_b={} N={} theta={} alpha={}",
        num(p.l),
        num(p.w),
        num(p.h),
        num(p.t),
        num(p.t_n),
        num(p.t_h),
        num(p.t_ab),
        num(p.t_b),
        p.n,
        num(p.theta),
        num(p.alpha)
    );
    let _ = writeln!(
        out,
        "// L_T={} N1={} N2={} mode={}",
        num(p.l_t),
        p.n1,
        p.n2,
        p.mode
    );
    let _ = writeln!(out, "union() {{");
    let _ = writeln!(out, "  // base slab");
    write_box(&mut out, "  ", &lay.base);
    for c in &lay.chambers {
        let kind = if c.helical { "helical" } else { "straight" };
        let _ = writeln!(out, "  // chamber {} ({kind})", c.index);
        let _ = writeln!(out, "  difference() {{");
        write_box(&mut out, "    ", &c.outer);
        write_box(&mut out, "    ", &c.cavity);
        for ch in lay
            .channels
            .iter()
            .filter(|ch| ch.from == c.index || ch.from + 1 == c.index)
        {
            write_box(&mut out, "    ", &ch.passage);
        }
        let _ = writeln!(out, "  }}");
    }
    for ch in &lay.channels {
        let _ = writeln!(out, "  // channel {}-{}", ch.from, ch.from + 1);
        let _ = writeln!(out, "  difference() {{");
        write_box(&mut out, "    ", &ch.outer);
        write_box(&mut out, "    ", &ch.passage);
        let _ = writeln!(out, "  }}");
    }
    let _ = writeln!(out, "}}");
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub normal: [f64; 3],
    pub vertices: [[f64; 3]; 3],
}

impl Triangle {
    pub fn area(&self) -> f64 {
        0.5 * norm(cross3(sub(self.vertices[1], self.vertices[0]), sub(self.vertices[2], self.vertices[0])))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeshModel {
    pub triangles: Vec<Triangle>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Corner indices (bits x, y, z) of each face, counter-clockwise seen from
/// outside.
const BOX_FACES: [[usize; 4]; 6] = [
    [0, 2, 3, 1], // z = 0
    [4, 5, 7, 6], // z = max
    [0, 1, 5, 4], // y = 0
    [2, 6, 7, 3], // y = max
    [0, 4, 6, 2], // x = 0
    [1, 3, 7, 5], // x = max
];

impl MeshModel {
    /// Twelve outward-facing triangles per box.
    pub fn from_boxes(parts: &[BoxPart]) -> Self {
        let mut triangles = Vec::with_capacity(12 * parts.len());
        for part in parts {
            let c = part.corners();
            for f in BOX_FACES {
                for tri in [[f[0], f[1], f[2]], [f[0], f[2], f[3]]] {
                    let v = [c[tri[0]], c[tri[1]], c[tri[2]]];
                    let n = cross3(sub(v[1], v[0]), sub(v[2], v[0]));
                    let len = norm(n);
                    triangles.push(Triangle {
                        normal: [n[0] / len, n[1] / len, n[2] / len],
                        vertices: v,
                    });
                }
            }
        }
        MeshModel { triangles }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Binary STL: 80-byte header, little-endian triangle count, then 50 bytes
    /// per triangle (normal, three vertices as `f32`, zero attribute word).
    pub fn to_stl_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(stl_size(self.len()));
        let mut header = [0u8; 80];
        header[..STL_HEADER.len()].copy_from_slice(STL_HEADER);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for t in &self.triangles {
            for v in std::iter::once(&t.normal).chain(t.vertices.iter()) {
                for c in v {
                    out.extend_from_slice(&(*c as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }

    /// Parses a binary STL produced by [`MeshModel::to_stl_bytes`] (or any
    /// binary STL).
    pub fn from_stl_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 84 {
            return Err(Error::Data(format!("STL too short: {} bytes", bytes.len())));
        }
        let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
        if bytes.len() != stl_size(count) {
            return Err(Error::Data(format!(
                "STL declares {count} triangles but has {} bytes",
                bytes.len()
            )));
        }
        let read = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as f64;
        let triangles = (0..count)
            .map(|i| {
                let base = 84 + 50 * i;
                let v = |k: usize| [read(base + 12 * k), read(base + 12 * k + 4), read(base + 12 * k + 8)];
                Triangle {
                    normal: v(0),
                    vertices: [v(1), v(2), v(3)],
                }
            })
            .collect();
        Ok(MeshModel { triangles })
    }

    pub fn write_stl(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &self.to_stl_bytes())
    }
}

/// Byte size of a binary STL with `triangles` facets.
pub fn stl_size(triangles: usize) -> usize {
    84 + 50 * triangles
}

/// Preview mesh of a feasible design (parts concatenated, cavities not cut).
pub fn build_mesh(p: &DesignParams, bounds: &ParameterBounds, options: LayoutOptions) -> Result<MeshModel> {
    Ok(MeshModel::from_boxes(&layout(p, bounds, options)?.solid_parts()))
}
