//! Pneu-net actuator parameterization, bounds and synthetic dataset construction.
//!
//! A design has eleven independent parameters (chamber geometry, chamber count,
//! chamber orientation and helical fraction), three dependent ones (total length
//! and the helical/straight chamber split) and two categories (actuation mode and
//! chamber cross-section).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// Relative tolerance used when checking a stored total length against its derivation.
const LENGTH_REL_TOL: f64 = 1e-9;
/// Products `alpha * N` this close below a half still round up, so a helical
/// fraction that went through standardization keeps its chamber split.
const TIE_TOL: f64 = 1e-9;

/// Actuation mode, derived from the helical / straight chamber split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Bending,
    Twisting,
    Mixed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Bending, Mode::Twisting, Mode::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bending => "Bending",
            Mode::Twisting => "Twisting",
            Mode::Mixed => "Mixed",
        }
    }

    pub fn from_counts(helical: u32, straight: u32) -> Mode {
        if helical == 0 {
            Mode::Bending
        } else if straight == 0 {
            Mode::Twisting
        } else {
            Mode::Mixed
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Bending" => Ok(Mode::Bending),
            "Twisting" => Ok(Mode::Twisting),
            "Mixed" => Ok(Mode::Mixed),
            other => Err(Error::Encoding(format!("unknown mode level `{other}`"))),
        }
    }
}

/// Chamber cross-section. Only rectangular chambers are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum CrossSection {
    #[default]
    Rectangular,
}

impl CrossSection {
    pub fn as_str(self) -> &'static str {
        "Rectangular"
    }
}

impl FromStr for CrossSection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Rectangular" => Ok(CrossSection::Rectangular),
            other => Err(Error::Encoding(format!(
                "unknown cross_section level `{other}`"
            ))),
        }
    }
}

/// Where a dataset row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Sampled,
    Augmented,
    Generated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Sampled => "sampled",
            Provenance::Augmented => "augmented",
            Provenance::Generated => "generated",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Provenance::Sampled),
            "augmented" => Ok(Provenance::Augmented),
            "generated" => Ok(Provenance::Generated),
            other => Err(Error::Data(format!("unknown provenance `{other}`"))),
        }
    }
}

/// Numeric design parameters, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    L,
    W,
    H,
    T,
    Tn,
    Th,
    Tab,
    Tb,
    N,
    Theta,
    Alpha,
    Lt,
    N1,
    N2,
}

impl Param {
    pub const INDEPENDENT: [Param; 11] = [
        Param::L,
        Param::W,
        Param::H,
        Param::T,
        Param::Tn,
        Param::Th,
        Param::Tab,
        Param::Tb,
        Param::N,
        Param::Theta,
        Param::Alpha,
    ];

    pub const NUMERIC: [Param; 14] = [
        Param::L,
        Param::W,
        Param::H,
        Param::T,
        Param::Tn,
        Param::Th,
        Param::Tab,
        Param::Tb,
        Param::N,
        Param::Theta,
        Param::Alpha,
        Param::Lt,
        Param::N1,
        Param::N2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::L => "L",
            Param::W => "W",
            Param::H => "H",
            Param::T => "t",
            Param::Tn => "t_n",
            Param::Th => "t_h",
            Param::Tab => "t_ab",
            Param::Tb => "t_b",
            Param::N => "N",
            Param::Theta => "theta",
            Param::Alpha => "alpha",
            Param::Lt => "L_T",
            Param::N1 => "N1",
            Param::N2 => "N2",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::NUMERIC.into_iter().find(|p| p.name() == name)
    }

    /// Length-type parameters (mm), which must be strictly positive.
    pub fn is_length(self) -> bool {
        matches!(
            self,
            Param::L
                | Param::W
                | Param::H
                | Param::T
                | Param::Tn
                | Param::Th
                | Param::Tab
                | Param::Tb
                | Param::Lt
        )
    }

    pub fn is_integer(self) -> bool {
        matches!(self, Param::N | Param::N1 | Param::N2)
    }
}

/// The eleven independent parameters of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Independent {
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub t: f64,
    pub t_n: f64,
    pub t_h: f64,
    pub t_ab: f64,
    pub t_b: f64,
    pub n: u32,
    pub theta: f64,
    pub alpha: f64,
}

/// Parameters that follow from the independent ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dependents {
    pub l_t: f64,
    pub n1: u32,
    pub n2: u32,
    pub mode: Mode,
}

/// One actuator: all sixteen parameters. Lengths in mm, `theta` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub t: f64,
    pub t_n: f64,
    pub t_h: f64,
    pub t_ab: f64,
    pub t_b: f64,
    #[serde(rename = "N")]
    pub n: u32,
    pub theta: f64,
    pub alpha: f64,
    #[serde(rename = "L_T")]
    pub l_t: f64,
    #[serde(rename = "N1")]
    pub n1: u32,
    #[serde(rename = "N2")]
    pub n2: u32,
    pub mode: Mode,
    pub cross_section: CrossSection,
}

/// Derives total length, helical/straight chamber counts and mode.
///
/// `N1 = round(alpha * N)` with ties rounded up, `N2 = N - N1` and
/// `L_T = N * L + (N - 1) * t_n`.
pub fn derive_dependents(ind: &Independent) -> Result<Dependents> {
    if ind.n == 0 {
        return Err(Error::invalid("N", "chamber count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&ind.alpha) {
        return Err(Error::invalid(
            "alpha",
            format!("helical fraction {} outside [0, 1]", ind.alpha),
        ));
    }
    let n = ind.n;
    let n1 = ((ind.alpha * n as f64) + 0.5 + TIE_TOL).floor().min(n as f64) as u32;
    let n2 = n - n1;
    let l_t = n as f64 * ind.l + (n as f64 - 1.0) * ind.t_n;
    Ok(Dependents {
        l_t,
        n1,
        n2,
        mode: Mode::from_counts(n1, n2),
    })
}

impl DesignParams {
    pub fn from_independent(ind: Independent) -> Result<Self> {
        let dep = derive_dependents(&ind)?;
        Ok(DesignParams {
            l: ind.l,
            w: ind.w,
            h: ind.h,
            t: ind.t,
            t_n: ind.t_n,
            t_h: ind.t_h,
            t_ab: ind.t_ab,
            t_b: ind.t_b,
            n: ind.n,
            theta: ind.theta,
            alpha: ind.alpha,
            l_t: dep.l_t,
            n1: dep.n1,
            n2: dep.n2,
            mode: dep.mode,
            cross_section: CrossSection::Rectangular,
        })
    }

    pub fn independent(&self) -> Independent {
        Independent {
            l: self.l,
            w: self.w,
            h: self.h,
            t: self.t,
            t_n: self.t_n,
            t_h: self.t_h,
            t_ab: self.t_ab,
            t_b: self.t_b,
            n: self.n,
            theta: self.theta,
            alpha: self.alpha,
        }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::L => self.l,
            Param::W => self.w,
            Param::H => self.h,
            Param::T => self.t,
            Param::Tn => self.t_n,
            Param::Th => self.t_h,
            Param::Tab => self.t_ab,
            Param::Tb => self.t_b,
            Param::N => self.n as f64,
            Param::Theta => self.theta,
            Param::Alpha => self.alpha,
            Param::Lt => self.l_t,
            Param::N1 => self.n1 as f64,
            Param::N2 => self.n2 as f64,
        }
    }

    /// The three designs used for simulation in the reference study
    /// (one per actuation mode).
    pub fn reference(mode: Mode) -> DesignParams {
        let ind = match mode {
            Mode::Bending => Independent {
                l: 9.51,
                w: 15.2,
                h: 13.01,
                t: 4.02,
                t_n: 1.5,
                t_h: 3.95,
                t_ab: 1.95,
                t_b: 2.12,
                n: 12,
                theta: 0.0,
                alpha: 0.0,
            },
            Mode::Twisting => Independent {
                l: 7.83,
                w: 16.55,
                h: 8.5,
                t: 0.76,
                t_n: 3.89,
                t_h: 3.05,
                t_ab: 1.89,
                t_b: 2.4,
                n: 8,
                theta: 27.2,
                alpha: 1.0,
            },
            Mode::Mixed => Independent {
                l: 8.01,
                w: 15.12,
                h: 12.98,
                t: 1.49,
                t_n: 2.8,
                t_h: 4.07,
                t_ab: 2.05,
                t_b: 1.97,
                n: 12,
                theta: 27.2,
                alpha: 0.5,
            },
        };
        DesignParams::from_independent(ind).expect("reference designs are valid")
    }
}

/// Closed interval for one independent parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub integer: bool,
}

impl Bound {
    pub fn new(lower: f64, upper: f64) -> Self {
        Bound {
            lower,
            upper,
            integer: false,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    /// Smallest and largest integers inside the interval.
    pub fn integer_range(&self) -> Option<(u32, u32)> {
        let lo = self.lower.ceil().max(0.0);
        let hi = self.upper.floor();
        (lo <= hi && hi <= u32::MAX as f64).then_some((lo as u32, hi as u32))
    }
}

/// Lower and upper bounds of every independent parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    #[serde(rename = "L")]
    pub l: Bound,
    #[serde(rename = "W")]
    pub w: Bound,
    #[serde(rename = "H")]
    pub h: Bound,
    pub t: Bound,
    pub t_n: Bound,
    pub t_h: Bound,
    pub t_ab: Bound,
    pub t_b: Bound,
    #[serde(rename = "N")]
    pub n: Bound,
    pub theta: Bound,
    pub alpha: Bound,
}

const DEFAULT_BOUNDS_JSON: &str = include_str!("../config/bounds.json");

impl Default for ParameterBounds {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_BOUNDS_JSON).expect("bundled bounds.json is valid")
    }
}

impl ParameterBounds {
    /// Bound of an independent parameter; `None` for dependent ones.
    pub fn get(&self, p: Param) -> Option<&Bound> {
        Some(match p {
            Param::L => &self.l,
            Param::W => &self.w,
            Param::H => &self.h,
            Param::T => &self.t,
            Param::Tn => &self.t_n,
            Param::Th => &self.t_h,
            Param::Tab => &self.t_ab,
            Param::Tb => &self.t_b,
            Param::N => &self.n,
            Param::Theta => &self.theta,
            Param::Alpha => &self.alpha,
            Param::Lt | Param::N1 | Param::N2 => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for p in Param::INDEPENDENT {
            let b = self.get(p).expect("independent");
            if !(b.lower.is_finite() && b.upper.is_finite()) {
                return Err(Error::Config(format!("bounds for {} are not finite", p.name())));
            }
            if b.lower >= b.upper {
                return Err(Error::Config(format!(
                    "bounds for {}: lower {} must be below upper {}",
                    p.name(),
                    b.lower,
                    b.upper
                )));
            }
            if p.is_length() && b.lower <= 0.0 {
                return Err(Error::Config(format!(
                    "bounds for {}: lengths need a positive lower bound",
                    p.name()
                )));
            }
        }
        if self.alpha.lower < 0.0 || self.alpha.upper > 1.0 {
            return Err(Error::Config("bounds for alpha must lie within [0, 1]".into()));
        }
        match self.n.integer_range() {
            Some((lo, _)) if lo >= 1 => Ok(()),
            _ => Err(Error::Config(
                "bounds for N must contain an integer of at least 1".into(),
            )),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: ParameterBounds = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&util::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bounds serialize")
    }
}

/// Which constraint a design violates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    NotFinite,
    NonPositive,
    OutOfBounds { lower: f64, upper: f64 },
    ChamberCount,
    DependentMismatch { expected: f64 },
    ModeMismatch { expected: Mode },
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::NotFinite => write!(f, "must be finite"),
            Constraint::NonPositive => write!(f, "must be strictly positive"),
            Constraint::OutOfBounds { lower, upper } => {
                write!(f, "must lie within [{lower}, {upper}]")
            }
            Constraint::ChamberCount => write!(f, "N1 + N2 must equal N and N must be at least 1"),
            Constraint::DependentMismatch { expected } => {
                write!(f, "inconsistent with derivation (expected {expected})")
            }
            Constraint::ModeMismatch { expected } => {
                write!(f, "inconsistent with chamber split (expected {expected})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub value: f64,
    pub constraint: Constraint,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} {}", self.field, self.value, self.constraint)
    }
}

/// Violated constraints of a design; empty when the design is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn for_field<'a>(&'a self, field: &'a str) -> impl Iterator<Item = &'a Violation> + 'a {
        self.violations.iter().filter(move |v| v.field == field)
    }

    fn push(&mut self, p: Param, value: f64, constraint: Constraint) {
        self.violations.push(Violation {
            field: p.name().to_string(),
            value,
            constraint,
        });
    }
}

/// Checks a design against the bounds and its internal consistency rules.
///
/// A field that is non-finite or non-positive is reported once for that reason
/// and not additionally for its bounds.
pub fn validate_design(p: &DesignParams, b: &ParameterBounds) -> ValidationReport {
    let mut report = ValidationReport::default();

    for param in Param::NUMERIC {
        let v = p.get(param);
        if !v.is_finite() {
            report.push(param, v, Constraint::NotFinite);
            continue;
        }
        if param.is_length() && v <= 0.0 {
            report.push(param, v, Constraint::NonPositive);
            continue;
        }
        if let Some(bound) = b.get(param) {
            if !bound.contains(v) {
                report.push(
                    param,
                    v,
                    Constraint::OutOfBounds {
                        lower: bound.lower,
                        upper: bound.upper,
                    },
                );
            }
        }
    }
    if !(0.0..=1.0).contains(&p.alpha) && b.alpha.contains(p.alpha) {
        // bounds wider than [0, 1] cannot make a fraction valid
        report.push(Param::Alpha, p.alpha, Constraint::OutOfBounds { lower: 0.0, upper: 1.0 });
    }

    if p.n == 0 || p.n1.checked_add(p.n2) != Some(p.n) {
        report.push(Param::N, p.n as f64, Constraint::ChamberCount);
    }

    if let Ok(dep) = derive_dependents(&p.independent()) {
        if dep.n1 != p.n1 {
            report.push(
                Param::N1,
                p.n1 as f64,
                Constraint::DependentMismatch {
                    expected: dep.n1 as f64,
                },
            );
        }
        let tol = LENGTH_REL_TOL * dep.l_t.abs().max(1.0);
        if p.l_t.is_finite() && (p.l_t - dep.l_t).abs() > tol {
            report.push(
                Param::Lt,
                p.l_t,
                Constraint::DependentMismatch { expected: dep.l_t },
            );
        }
    }

    let expected_mode = Mode::from_counts(p.n1, p.n2);
    if p.mode != expected_mode {
        report.violations.push(Violation {
            field: "mode".into(),
            value: f64::NAN,
            constraint: Constraint::ModeMismatch {
                expected: expected_mode,
            },
        });
    }
    report
}

/// Settings for synthetic dataset construction. Bounds are supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    /// Share of rows produced by augmentation rather than uniform sampling.
    #[serde(default = "SynthConfig::default_augmented_fraction")]
    pub augmented_fraction: f64,
    /// Augmentation jitter, as a fraction of each bound width.
    #[serde(default = "SynthConfig::default_noise_scale")]
    pub noise_scale: f64,
    /// Helical fractions drawn for sampled rows.
    #[serde(default = "SynthConfig::default_alpha_levels")]
    pub alpha_levels: Vec<f64>,
}

impl SynthConfig {
    fn default_augmented_fraction() -> f64 {
        0.5
    }

    fn default_noise_scale() -> f64 {
        0.05
    }

    fn default_alpha_levels() -> Vec<f64> {
        vec![0.0, 1.0]
    }

    pub fn with_count(count: usize) -> Self {
        SynthConfig {
            count,
            augmented_fraction: Self::default_augmented_fraction(),
            noise_scale: Self::default_noise_scale(),
            alpha_levels: Self::default_alpha_levels(),
        }
    }
}

/// A dataset row together with its provenance tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRecord {
    pub params: DesignParams,
    pub provenance: Provenance,
}

/// Table of designs within a common set of bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignDataset {
    pub rows: Vec<DesignRecord>,
    pub bounds: ParameterBounds,
}

impl DesignDataset {
    /// Wraps records after checking every row against the bounds.
    pub fn new(rows: Vec<DesignRecord>, bounds: ParameterBounds) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            let report = validate_design(&r.params, &bounds);
            if let Some(v) = report.violations.first() {
                return Err(Error::Data(format!("row {i}: {v}")));
            }
        }
        Ok(DesignDataset { rows, bounds })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn params(&self) -> impl ExactSizeIterator<Item = &DesignParams> + '_ {
        self.rows.iter().map(|r| &r.params)
    }

    pub fn mode_counts(&self) -> ModeCounts {
        ModeCounts::from_designs(self.params())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &designs_to_csv(&self.rows, None)?)
    }

    pub fn read_csv(path: &Path, bounds: ParameterBounds) -> Result<Self> {
        let rows = read_designs_csv(path)?;
        DesignDataset::new(rows, bounds)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub bending: usize,
    pub twisting: usize,
    pub mixed: usize,
}

impl ModeCounts {
    pub fn from_designs<'a>(designs: impl IntoIterator<Item = &'a DesignParams>) -> Self {
        let mut c = ModeCounts::default();
        for d in designs {
            match d.mode {
                Mode::Bending => c.bending += 1,
                Mode::Twisting => c.twisting += 1,
                Mode::Mixed => c.mixed += 1,
            }
        }
        c
    }

    pub fn get(&self, mode: Mode) -> usize {
        match mode {
            Mode::Bending => self.bending,
            Mode::Twisting => self.twisting,
            Mode::Mixed => self.mixed,
        }
    }
}

pub const CSV_COLUMNS: [&str; 16] = [
    "L",
    "W",
    "H",
    "t",
    "t_n",
    "t_h",
    "t_ab",
    "t_b",
    "N",
    "theta",
    "alpha",
    "L_T",
    "N1",
    "N2",
    "mode",
    "cross_section",
];

/// Serializes designs as CSV: the sixteen parameter columns, `provenance`, and an
/// optional extra numeric column.
pub fn designs_to_csv(rows: &[DesignRecord], extra: Option<(&str, &[f64])>) -> Result<Vec<u8>> {
    if let Some((_, values)) = extra {
        if values.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: values.len(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    header.push("provenance");
    if let Some((name, _)) = extra {
        header.push(name);
    }
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let p = &r.params;
        let mut rec: Vec<String> = Param::NUMERIC
            .iter()
            .map(|&param| match param {
                Param::N => p.n.to_string(),
                Param::N1 => p.n1.to_string(),
                Param::N2 => p.n2.to_string(),
                other => p.get(other).to_string(),
            })
            .collect();
        rec.push(p.mode.as_str().into());
        rec.push(p.cross_section.as_str().into());
        rec.push(r.provenance.as_str().into());
        if let Some((_, values)) = extra {
            rec.push(values[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

/// Reads designs written by [`designs_to_csv`]. Columns are matched by header
/// name; unknown extra columns are ignored and a missing `provenance` column
/// defaults to `sampled`.
pub fn read_designs_csv(path: &Path) -> Result<Vec<DesignRecord>> {
    let text = util::read_to_string(path)?;
    parse_designs_csv(&text).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_designs_csv(text: &str) -> Result<Vec<DesignRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = CSV_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let prov_idx = headers.iter().position(|h| h == "provenance");

    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let real = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "row {line}: column {} is not a number: `{}`",
                    CSV_COLUMNS[k],
                    field(k)
                ))
            })
        };
        let int = |k: usize| -> Result<u32> {
            field(k).parse::<u32>().map_err(|_| {
                Error::Data(format!(
                    "row {line}: column {} is not a non-negative integer: `{}`",
                    CSV_COLUMNS[k],
                    field(k)
                ))
            })
        };
        let params = DesignParams {
            l: real(0)?,
            w: real(1)?,
            h: real(2)?,
            t: real(3)?,
            t_n: real(4)?,
            t_h: real(5)?,
            t_ab: real(6)?,
            t_b: real(7)?,
            n: int(8)?,
            theta: real(9)?,
            alpha: real(10)?,
            l_t: real(11)?,
            n1: int(12)?,
            n2: int(13)?,
            mode: field(14)
                .parse()
                .map_err(|e| Error::Data(format!("row {line}: {e}")))?,
            cross_section: field(15)
                .parse()
                .map_err(|e| Error::Data(format!("row {line}: {e}")))?,
        };
        let provenance = match prov_idx {
            Some(i) => rec.get(i).unwrap_or("").trim().parse()?,
            None => Provenance::Sampled,
        };
        out.push(DesignRecord { params, provenance });
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, b: &Bound) -> f64 {
    b.lower + (b.upper - b.lower) * rng.random::<f64>()
}

fn sample_design(
    rng: &mut ChaCha8Rng,
    bounds: &ParameterBounds,
    alpha_levels: &[f64],
    n_range: (u32, u32),
) -> Result<DesignParams> {
    let l = uniform(rng, &bounds.l);
    let w = uniform(rng, &bounds.w);
    let h = uniform(rng, &bounds.h);
    let t = uniform(rng, &bounds.t);
    let t_n = uniform(rng, &bounds.t_n);
    let t_h = uniform(rng, &bounds.t_h);
    let t_ab = uniform(rng, &bounds.t_ab);
    let t_b = uniform(rng, &bounds.t_b);
    let n = rng.random_range(n_range.0..=n_range.1);
    let theta = uniform(rng, &bounds.theta);
    let alpha = alpha_levels[rng.random_range(0..alpha_levels.len())];
    DesignParams::from_independent(Independent {
        l,
        w,
        h,
        t,
        t_n,
        t_h,
        t_ab,
        t_b,
        n,
        theta,
        alpha,
    })
}

/// Builds a synthetic dataset: uniform samples within the bounds followed by
/// augmented copies of those samples. Sampled rows draw `alpha` from the
/// configured levels only, so with the default `{0, 1}` every row is a pure
/// bending or pure twisting design.
pub fn synthesize_dataset(
    config: &SynthConfig,
    bounds: &ParameterBounds,
    seed: u64,
) -> Result<DesignDataset> {
    bounds.validate()?;
    if config.count == 0 {
        return Err(Error::Config("row count must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&config.augmented_fraction) {
        return Err(Error::Config(
            "augmented_fraction must lie in [0, 1)".into(),
        ));
    }
    let levels: Vec<f64> = config
        .alpha_levels
        .iter()
        .copied()
        .filter(|a| bounds.alpha.contains(*a) && (0.0..=1.0).contains(a))
        .collect();
    if levels.is_empty() {
        return Err(Error::Config(
            "no configured alpha level lies within the alpha bounds".into(),
        ));
    }
    let n_range = bounds.n.integer_range().expect("validated");

    let n_aug = ((config.count as f64) * config.augmented_fraction).round() as usize;
    let n_aug = n_aug.min(config.count - 1);
    let n_sampled = config.count - n_aug;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(config.count);
    for _ in 0..n_sampled {
        rows.push(DesignRecord {
            params: sample_design(&mut rng, bounds, &levels, n_range)?,
            provenance: Provenance::Sampled,
        });
    }
    if n_aug > 0 {
        let seeds: Vec<DesignParams> = rows.iter().map(|r| r.params).collect();
        let aug_seed = rng.random::<u64>();
        for params in augment(&seeds, n_aug, config.noise_scale, bounds, aug_seed)? {
            rows.push(DesignRecord {
                params,
                provenance: Provenance::Augmented,
            });
        }
    }
    DesignDataset::new(rows, bounds.clone())
}

/// Jitters randomly chosen seed designs with clipped Gaussian noise whose
/// standard deviation is `noise_scale` times each bound width. The chamber count
/// is re-rounded, `alpha` is kept, and dependents are re-derived, so the
/// actuation category of the seed is preserved.
pub fn augment(
    seeds: &[DesignParams],
    count: usize,
    noise_scale: f64,
    bounds: &ParameterBounds,
    seed: u64,
) -> Result<Vec<DesignParams>> {
    if seeds.is_empty() {
        return Err(Error::Config("augmentation needs at least one seed design".into()));
    }
    if !(noise_scale > 0.0 && noise_scale <= 0.5) {
        return Err(Error::Config(format!(
            "noise_scale {noise_scale} must lie in (0, 0.5]"
        )));
    }
    bounds.validate()?;
    let (n_lo, n_hi) = bounds.n.integer_range().expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng, v: f64, b: &Bound| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        b.clamp(v + z * noise_scale * b.width())
    };

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let s = &seeds[rng.random_range(0..seeds.len())];
        let l = jitter(&mut rng, s.l, &bounds.l);
        let w = jitter(&mut rng, s.w, &bounds.w);
        let h = jitter(&mut rng, s.h, &bounds.h);
        let t = jitter(&mut rng, s.t, &bounds.t);
        let t_n = jitter(&mut rng, s.t_n, &bounds.t_n);
        let t_h = jitter(&mut rng, s.t_h, &bounds.t_h);
        let t_ab = jitter(&mut rng, s.t_ab, &bounds.t_ab);
        let t_b = jitter(&mut rng, s.t_b, &bounds.t_b);
        let n_raw = jitter(&mut rng, s.n as f64, &bounds.n);
        let n = (n_raw.round() as u32).clamp(n_lo, n_hi);
        let theta = jitter(&mut rng, s.theta, &bounds.theta);
        out.push(DesignParams::from_independent(Independent {
            l,
            w,
            h,
            t,
            t_n,
            t_h,
            t_ab,
            t_b,
            n,
            theta,
            alpha: s.alpha,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ind(n: u32, alpha: f64, l: f64, t_n: f64) -> Independent {
        Independent {
            l,
            w: 15.0,
            h: 10.0,
            t: 1.0,
            t_n,
            t_h: 3.0,
            t_ab: 2.0,
            t_b: 2.0,
            n,
            theta: 20.0,
            alpha,
        }
    }

    #[test]
    fn dependents_of_mixed_reference_inputs() {
        let d = derive_dependents(&ind(12, 0.5, 8.01, 2.8)).unwrap();
        assert_eq!((d.n1, d.n2, d.mode), (6, 6, Mode::Mixed));
        // 12 * 8.01 + 11 * 2.8 = 96.12 + 30.8
        assert!((d.l_t - 126.92).abs() < 1e-12);
    }

    #[test]
    fn single_chamber_has_no_gaps() {
        let d = derive_dependents(&ind(1, 0.0, 10.0, 5.0)).unwrap();
        assert_eq!((d.n1, d.n2, d.mode), (0, 1, Mode::Bending));
        assert_eq!(d.l_t, 10.0);
    }

    #[test]
    fn all_helical_is_twisting() {
        let d = derive_dependents(&ind(8, 1.0, 7.83, 3.89)).unwrap();
        assert_eq!((d.n1, d.n2, d.mode), (8, 0, Mode::Twisting));
    }

    #[test]
    fn half_way_ties_round_up() {
        let d = derive_dependents(&ind(5, 0.5, 8.0, 2.0)).unwrap();
        assert_eq!((d.n1, d.n2), (3, 2));
        let d = derive_dependents(&ind(3, 0.5, 8.0, 2.0)).unwrap();
        assert_eq!((d.n1, d.n2), (2, 1));
    }

    #[test]
    fn zero_chambers_is_rejected() {
        let err = derive_dependents(&ind(0, 0.0, 8.0, 2.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref field, .. } if field == "N"));
    }

    #[test]
    fn reference_designs_validate_against_default_bounds() {
        let b = ParameterBounds::default();
        for mode in Mode::ALL {
            let p = DesignParams::reference(mode);
            assert_eq!(p.mode, mode);
            let r = validate_design(&p, &b);
            assert!(r.is_valid(), "{mode}: {:?}", r.violations);
        }
    }

    #[test]
    fn negative_length_is_one_positivity_violation() {
        let mut p = DesignParams::reference(Mode::Bending);
        p.l = -1.0;
        let r = validate_design(&p, &ParameterBounds::default());
        let l: Vec<_> = r.for_field("L").collect();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].constraint, Constraint::NonPositive);
    }

    #[test]
    fn alpha_above_one_is_a_range_violation() {
        let mut p = DesignParams::reference(Mode::Twisting);
        p.alpha = 1.5;
        let r = validate_design(&p, &ParameterBounds::default());
        let a: Vec<_> = r.for_field("alpha").collect();
        assert_eq!(a.len(), 1);
        assert!(matches!(a[0].constraint, Constraint::OutOfBounds { .. }));
    }

    #[test]
    fn inconsistent_dependents_are_reported() {
        let mut p = DesignParams::reference(Mode::Mixed);
        p.n1 = 7;
        p.l_t += 1.0;
        let r = validate_design(&p, &ParameterBounds::default());
        assert!(r.for_field("N").any(|v| v.constraint == Constraint::ChamberCount));
        assert_eq!(r.for_field("N1").count(), 1);
        assert_eq!(r.for_field("L_T").count(), 1);
    }

    #[test]
    fn default_bounds_validate_and_round_trip_json() {
        let b = ParameterBounds::default();
        b.validate().unwrap();
        assert!(b.n.integer);
        assert_eq!(ParameterBounds::from_json(&b.to_json()).unwrap(), b);
    }

    #[test]
    fn bad_bounds_are_configuration_errors() {
        let mut b = ParameterBounds::default();
        b.w = Bound::new(20.0, 10.0);
        assert!(matches!(b.validate(), Err(Error::Config(_))));
        let mut b = ParameterBounds::default();
        b.alpha = Bound::new(0.0, 1.5);
        assert!(matches!(b.validate(), Err(Error::Config(_))));
        let mut b = ParameterBounds::default();
        b.n = Bound::new(4.2, 4.8);
        assert!(matches!(b.validate(), Err(Error::Config(_))));
        let err = synthesize_dataset(&SynthConfig::with_count(10), &b, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn full_size_dataset_has_expected_shape() {
        let ds = synthesize_dataset(&SynthConfig::with_count(11000), &ParameterBounds::default(), 42)
            .unwrap();
        assert_eq!(ds.len(), 11000);
        let csv = designs_to_csv(&ds.rows[..1], None).unwrap();
        let header = String::from_utf8(csv).unwrap();
        let header = header.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 17);
        let counts = ds.mode_counts();
        assert_eq!(counts.mixed, 0);
        assert!(counts.bending > 0 && counts.twisting > 0);
        let augmented = ds.rows.iter().filter(|r| r.provenance == Provenance::Augmented).count();
        assert_eq!(augmented, 5500);
    }

    #[test]
    fn narrow_bounds_give_in_range_row() {
        let eps = 1e-6;
        let mut b = ParameterBounds::default();
        for p in Param::INDEPENDENT {
            let bound = match p {
                Param::L => &mut b.l,
                Param::W => &mut b.w,
                Param::H => &mut b.h,
                Param::T => &mut b.t,
                Param::Tn => &mut b.t_n,
                Param::Th => &mut b.t_h,
                Param::Tab => &mut b.t_ab,
                Param::Tb => &mut b.t_b,
                Param::N => &mut b.n,
                Param::Theta => &mut b.theta,
                Param::Alpha => &mut b.alpha,
                _ => unreachable!(),
            };
            bound.lower = bound.upper - eps;
        }
        b.alpha = Bound::new(1.0 - eps, 1.0);
        let ds = synthesize_dataset(&SynthConfig::with_count(1), &b, 3).unwrap();
        assert_eq!(ds.len(), 1);
        let p = ds.rows[0].params;
        for param in Param::INDEPENDENT {
            assert!(b.get(param).unwrap().contains(p.get(param)), "{}", param.name());
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = SynthConfig::with_count(300);
        let b = ParameterBounds::default();
        let a = designs_to_csv(&synthesize_dataset(&cfg, &b, 7).unwrap().rows, None).unwrap();
        let c = designs_to_csv(&synthesize_dataset(&cfg, &b, 7).unwrap().rows, None).unwrap();
        assert_eq!(a, c);
        let d = designs_to_csv(&synthesize_dataset(&cfg, &b, 8).unwrap().rows, None).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn sampler_covers_bounds() {
        let cfg = SynthConfig {
            augmented_fraction: 0.0,
            ..SynthConfig::with_count(10_000)
        };
        let b = ParameterBounds::default();
        let ds = synthesize_dataset(&cfg, &b, 11).unwrap();
        for p in Param::INDEPENDENT {
            let bound = b.get(p).unwrap();
            let vals: Vec<f64> = ds.params().map(|d| d.get(p)).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 0.01 * bound.width();
            assert!(lo - bound.lower <= slack, "{} min {lo}", p.name());
            assert!(bound.upper - hi <= slack, "{} max {hi}", p.name());
        }
    }

    #[test]
    fn tiny_noise_reproduces_seeds() {
        let seeds = [DesignParams::reference(Mode::Bending)];
        let b = ParameterBounds::default();
        let out = augment(&seeds, 20, 1e-12, &b, 5).unwrap();
        for p in out {
            assert_eq!(p.n, seeds[0].n);
            assert_eq!(p.mode, Mode::Bending);
            for param in Param::NUMERIC {
                assert!((p.get(param) - seeds[0].get(param)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn augmenting_bending_reference_stays_bending_and_in_bounds() {
        let seeds = [DesignParams::reference(Mode::Bending)];
        let b = ParameterBounds::default();
        let out = augment(&seeds, 1000, 0.05, &b, 9).unwrap();
        assert_eq!(out.len(), 1000);
        for p in &out {
            assert_eq!(p.mode, Mode::Bending);
            assert!(validate_design(p, &b).is_valid());
        }
    }

    #[test]
    fn augmentation_is_deterministic() {
        let seeds = [
            DesignParams::reference(Mode::Bending),
            DesignParams::reference(Mode::Twisting),
        ];
        let b = ParameterBounds::default();
        let a = augment(&seeds, 10, 0.1, &b, 77).unwrap();
        assert_eq!(a, augment(&seeds, 10, 0.1, &b, 77).unwrap());
    }

    #[test]
    fn augmentation_argument_errors() {
        let b = ParameterBounds::default();
        assert!(matches!(augment(&[], 3, 0.1, &b, 0), Err(Error::Config(_))));
        let seeds = [DesignParams::reference(Mode::Bending)];
        assert!(matches!(augment(&seeds, 3, 0.0, &b, 0), Err(Error::Config(_))));
        assert!(matches!(augment(&seeds, 3, 0.6, &b, 0), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = synthesize_dataset(&SynthConfig::with_count(50), &ParameterBounds::default(), 2)
            .unwrap();
        let bytes = designs_to_csv(&ds.rows, None).unwrap();
        let back = parse_designs_csv(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(back, ds.rows);
    }

    proptest! {
        #[test]
        fn chamber_split_is_consistent(n in 1u32..64, alpha in 0.0f64..=1.0, l in 0.1f64..50.0, t_n in 0.1f64..10.0) {
            let d = derive_dependents(&ind(n, alpha, l, t_n)).unwrap();
            prop_assert_eq!(d.n1 + d.n2, n);
            prop_assert_eq!(d.mode, Mode::from_counts(d.n1, d.n2));
            prop_assert!((d.n1 as f64 - alpha * n as f64).abs() <= 0.5 + 1e-12);
        }

        #[test]
        fn synthesized_rows_always_validate(count in 1usize..60, frac in 0.0f64..0.9, noise in 0.01f64..0.5, seed in any::<u64>()) {
            let cfg = SynthConfig { count, augmented_fraction: frac, noise_scale: noise, alpha_levels: vec![0.0, 1.0] };
            let b = ParameterBounds::default();
            let ds = synthesize_dataset(&cfg, &b, seed).unwrap();
            prop_assert_eq!(ds.len(), count);
            for p in ds.params() {
                prop_assert!(validate_design(p, &b).is_valid());
            }
        }
    }
}
