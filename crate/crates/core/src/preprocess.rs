//! Standardization and one-hot encoding of designs, plus the repairing decoder
//! that maps any feature vector back into the feasible design box.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design_space::{
    derive_dependents, DesignDataset, DesignParams, Independent, Mode, Param, ParameterBounds,
};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::util;

/// Helical fractions below this decode to pure bending.
pub const ALPHA_SNAP_LOW: f64 = 0.05;
/// Helical fractions above this decode to pure twisting.
pub const ALPHA_SNAP_HIGH: f64 = 0.95;

// keeps the band edges themselves stable under encode/decode rounding
const SNAP_TOL: f64 = 1e-9;

const MODE_FIELD: &str = "mode";
const CROSS_SECTION_FIELD: &str = "cross_section";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation; 1.0 for zero-variance columns.
    pub std: f64,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub levels: Vec<String>,
}

/// Column layout and scaling statistics of the feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub numeric: Vec<NumericColumn>,
    pub categorical: Vec<CategoricalColumn>,
    pub std_kind: String,
}

pub type FeatureVector = Vec<f64>;

/// Numeric columns are standardized with the population statistics of the
/// training rows. Mode levels are always `[Bending, Twisting, Mixed]`; other
/// categorical levels are collected in order of first appearance.
pub fn fit_schema(data: &DesignDataset) -> Result<FeatureSchema> {
    fit_schema_from(data.params())
}

pub fn fit_schema_from<'a>(
    designs: impl IntoIterator<Item = &'a DesignParams>,
) -> Result<FeatureSchema> {
    let designs: Vec<&DesignParams> = designs.into_iter().collect();
    if designs.len() < 2 {
        return Err(Error::Data(format!(
            "fitting a feature schema needs at least 2 rows, got {}",
            designs.len()
        )));
    }
    let n = designs.len() as f64;
    let numeric = Param::NUMERIC
        .iter()
        .map(|&p| {
            let vals: Vec<f64> = designs.iter().map(|d| d.get(p)).collect();
            let mean = util::pairwise_sum(&vals) / n;
            let dev: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
            let std = (util::pairwise_sum(&dev) / n).sqrt();
            let zero_variance = !(std > 1e-12 * mean.abs().max(1.0));
            NumericColumn {
                name: p.name().to_string(),
                mean,
                std: if zero_variance { 1.0 } else { std },
                zero_variance,
            }
        })
        .collect();

    let mut cross_levels: Vec<String> = Vec::new();
    for d in &designs {
        let level = d.cross_section.as_str().to_string();
        if !cross_levels.contains(&level) {
            cross_levels.push(level);
        }
    }
    Ok(FeatureSchema {
        numeric,
        categorical: vec![
            CategoricalColumn {
                name: MODE_FIELD.into(),
                levels: Mode::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            },
            CategoricalColumn {
                name: CROSS_SECTION_FIELD.into(),
                levels: cross_levels,
            },
        ],
        std_kind: "population".into(),
    })
}

impl FeatureSchema {
    pub fn dim(&self) -> usize {
        self.numeric.len() + self.categorical.iter().map(|c| c.levels.len()).sum::<usize>()
    }

    /// Column names in encoding order; one-hot columns are `field=level`.
    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.numeric.iter().map(|c| c.name.clone()).collect();
        for c in &self.categorical {
            names.extend(c.levels.iter().map(|l| format!("{}={}", c.name, l)));
        }
        names
    }

    fn numeric_index(&self, p: Param) -> Result<usize> {
        self.numeric
            .iter()
            .position(|c| c.name == p.name())
            .ok_or_else(|| Error::Encoding(format!("schema lacks numeric column {}", p.name())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: FeatureSchema = serde_json::from_str(text)?;
        for p in Param::NUMERIC {
            s.numeric_index(p)?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&util::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form; ties a trained model to its schema.
    pub fn fingerprint(&self) -> String {
        util::sha256_hex(serde_json::to_string(self).expect("schema serializes").as_bytes())
    }
}

pub fn encode(p: &DesignParams, s: &FeatureSchema) -> Result<FeatureVector> {
    let mut v = Vec::with_capacity(s.dim());
    for col in &s.numeric {
        let param = Param::from_name(&col.name)
            .ok_or_else(|| Error::Encoding(format!("unknown numeric column {}", col.name)))?;
        v.push(if col.zero_variance {
            0.0
        } else {
            (p.get(param) - col.mean) / col.std
        });
    }
    for cat in &s.categorical {
        let level = match cat.name.as_str() {
            MODE_FIELD => p.mode.as_str(),
            CROSS_SECTION_FIELD => p.cross_section.as_str(),
            other => return Err(Error::Encoding(format!("unknown categorical field {other}"))),
        };
        let hit = cat.levels.iter().position(|l| l == level).ok_or_else(|| {
            Error::Encoding(format!("level `{level}` not in schema for {}", cat.name))
        })?;
        v.extend((0..cat.levels.len()).map(|i| if i == hit { 1.0 } else { 0.0 }));
    }
    Ok(v)
}

pub fn encode_all<'a>(
    designs: impl IntoIterator<Item = &'a DesignParams>,
    s: &FeatureSchema,
) -> Result<FeatureMatrix> {
    let rows: Vec<FeatureVector> = designs
        .into_iter()
        .map(|d| encode(d, s))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(FeatureMatrix::zeros(0, s.dim()));
    }
    FeatureMatrix::from_rows(rows)
}

/// Disagreement between the dependent values carried in a feature vector and
/// the values re-derived from its independent part.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DependentDiscrepancy {
    pub l_t: f64,
    pub n1: f64,
    pub n2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub params: DesignParams,
    /// Euclidean distance, in standardized units, between the de-standardized
    /// independent values and their repaired (clipped, rounded, snapped) form.
    pub repair_distance: f64,
    pub dependent_discrepancy: DependentDiscrepancy,
}

/// Maps a feature vector back to a valid design.
///
/// Numeric fields are de-standardized and clipped to the bounds, `N` is rounded
/// to the nearest admissible integer, `alpha` is clipped and snapped to 0 or 1
/// near the ends. Dependents and mode are always re-derived; the one-hot mode
/// block of the vector is ignored.
pub fn decode(v: &[f64], s: &FeatureSchema, b: &ParameterBounds) -> Result<Decoded> {
    if v.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            actual: v.len(),
        });
    }
    let raw = |p: Param| -> Result<(f64, f64)> {
        let i = s.numeric_index(p)?;
        let col = &s.numeric[i];
        Ok(if col.zero_variance {
            (col.mean, col.std)
        } else {
            (v[i] * col.std + col.mean, col.std)
        })
    };

    let mut repair_sq = 0.0;
    let mut repaired = |p: Param, fix: &dyn Fn(f64) -> f64| -> Result<f64> {
        let (x, scale) = raw(p)?;
        let y = fix(x);
        let d = (y - x) / scale;
        repair_sq += d * d;
        Ok(y)
    };
    let clip = |p: Param| {
        let bound = *b.get(p).expect("independent");
        move |x: f64| bound.clamp(x)
    };

    let (n_lo, n_hi) = b
        .n
        .integer_range()
        .ok_or_else(|| Error::Config("bounds for N contain no integer".into()))?;
    let alpha_bound = b.alpha;
    let ind = Independent {
        l: repaired(Param::L, &clip(Param::L))?,
        w: repaired(Param::W, &clip(Param::W))?,
        h: repaired(Param::H, &clip(Param::H))?,
        t: repaired(Param::T, &clip(Param::T))?,
        t_n: repaired(Param::Tn, &clip(Param::Tn))?,
        t_h: repaired(Param::Th, &clip(Param::Th))?,
        t_ab: repaired(Param::Tab, &clip(Param::Tab))?,
        t_b: repaired(Param::Tb, &clip(Param::Tb))?,
        n: repaired(Param::N, &|x: f64| {
            x.round().clamp(n_lo as f64, n_hi as f64)
        })? as u32,
        theta: repaired(Param::Theta, &clip(Param::Theta))?,
        alpha: repaired(Param::Alpha, &|x: f64| {
            let a = alpha_bound.clamp(x.clamp(0.0, 1.0));
            let snapped = if a < ALPHA_SNAP_LOW - SNAP_TOL {
                0.0
            } else if a > ALPHA_SNAP_HIGH + SNAP_TOL {
                1.0
            } else {
                a
            };
            alpha_bound.clamp(snapped)
        })?,
    };
    let params = DesignParams::from_independent(ind)?;
    let dep = derive_dependents(&ind)?;
    let dependent_discrepancy = DependentDiscrepancy {
        l_t: (raw(Param::Lt)?.0 - dep.l_t).abs(),
        n1: (raw(Param::N1)?.0 - dep.n1 as f64).abs(),
        n2: (raw(Param::N2)?.0 - dep.n2 as f64).abs(),
    };
    Ok(Decoded {
        params,
        repair_distance: repair_sq.sqrt(),
        dependent_discrepancy,
    })
}
