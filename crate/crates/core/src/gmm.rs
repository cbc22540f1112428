//! Full-covariance Gaussian mixture model.
//!
//! All density evaluation goes through Cholesky factors in log space:
//! `ln N(x | mu, S) = -0.5 * (M ln 2pi + ln|S| + |L^-1 (x - mu)|^2)` with
//! `S = L L^T`. Fitting is plain expectation-maximization with a small ridge on
//! every covariance diagonal.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::util::{self, log_sum_exp, pairwise_sum};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Which representation the mixture was fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpace {
    /// Standardized, one-hot encoded design features.
    #[default]
    Feature,
    /// Low-dimensional t-SNE coordinates.
    Embedding,
}

#[derive(Debug, Clone)]
struct Component {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Component {
    fn new(index: usize, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| {
                Error::numeric(
                    format!("component {index}"),
                    "covariance is not positive definite",
                )
            })?
            .l();
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::numeric(
                format!("component {index}"),
                "covariance determinant is not finite",
            ));
        }
        Ok(Component {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let m = x.len();
        let maha = mahalanobis_sq(&self.chol, x, self.mean.as_slice());
        -0.5 * (m as f64 * (2.0 * PI).ln() + self.log_det + maha)
    }
}

/// `|L^-1 (x - mu)|^2` by forward substitution on the lower Cholesky factor.
fn mahalanobis_sq(chol: &DMatrix<f64>, x: &[f64], mean: &[f64]) -> f64 {
    let m = x.len();
    let mut y = vec![0.0; m];
    let mut acc = 0.0;
    for i in 0..m {
        let mut s = x[i] - mean[i];
        for (k, yk) in y.iter().enumerate().take(i) {
            s -= chol[(i, k)] * yk;
        }
        y[i] = s / chol[(i, i)];
        acc += y[i] * y[i];
    }
    acc
}

/// Density of a multivariate normal with row-major covariance `cov`.
pub fn gaussian_pdf(x: &[f64], mean: &[f64], cov: &[f64]) -> Result<f64> {
    Ok(gaussian_log_pdf(x, mean, cov)?.exp())
}

pub fn gaussian_log_pdf(x: &[f64], mean: &[f64], cov: &[f64]) -> Result<f64> {
    let m = mean.len();
    if x.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: x.len(),
        });
    }
    if cov.len() != m * m {
        return Err(Error::DimensionMismatch {
            expected: m * m,
            actual: cov.len(),
        });
    }
    let c = Component::new(
        0,
        DVector::from_column_slice(mean),
        DMatrix::from_row_slice(m, m, cov),
    )?;
    Ok(c.log_pdf(x))
}

/// Mixture weights, means and covariances of `K` Gaussian components.
#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    components: Vec<Component>,
    space: ModelSpace,
    schema_fingerprint: Option<String>,
}

/// On-disk form of a model. Covariances are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub k: usize,
    pub dim: usize,
    #[serde(default)]
    pub space: ModelSpace,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    #[serde(default)]
    pub schema_fingerprint: Option<String>,
}

impl GmmModel {
    /// Builds a model from raw parameters; covariances are row-major `M x M`.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Config("a mixture needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: means.len().min(covariances.len()),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("mixture weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        let m = means[0].len();
        let mut components = Vec::with_capacity(k);
        for (j, (mu, cov)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: mu.len(),
                });
            }
            if cov.len() != m * m {
                return Err(Error::DimensionMismatch {
                    expected: m * m,
                    actual: cov.len(),
                });
            }
            let cov = DMatrix::from_row_slice(m, m, cov);
            if (0..m).any(|r| (0..r).any(|c| cov[(r, c)] != cov[(c, r)])) {
                return Err(Error::numeric(format!("component {j}"), "covariance is not symmetric"));
            }
            components.push(Component::new(j, DVector::from_column_slice(mu), cov)?);
        }
        Ok(GmmModel {
            weights,
            components,
            space: ModelSpace::Feature,
            schema_fingerprint: None,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, j: usize) -> &[f64] {
        self.components[j].mean.as_slice()
    }

    /// Row-major covariance of component `j`.
    pub fn covariance(&self, j: usize) -> Vec<f64> {
        let c = &self.components[j].cov;
        let m = c.nrows();
        (0..m * m).map(|i| c[(i / m, i % m)]).collect()
    }

    /// Smallest eigenvalue over all component covariances.
    pub fn min_eigenvalue(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.cov.clone().symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn space(&self) -> ModelSpace {
        self.space
    }

    pub fn with_space(mut self, space: ModelSpace) -> Self {
        self.space = space;
        self
    }

    pub fn schema_fingerprint(&self) -> Option<&str> {
        self.schema_fingerprint.as_deref()
    }

    pub fn with_schema_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.schema_fingerprint = Some(fingerprint.into());
        self
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `ln w_j + ln N(x | mu_j, S_j)` for every component.
    fn weighted_log_pdfs(&self, x: &[f64], out: &mut [f64]) {
        for (j, (w, c)) in self.weights.iter().zip(&self.components).enumerate() {
            out[j] = w.ln() + c.log_pdf(x);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut terms = vec![0.0; self.k()];
        self.weighted_log_pdfs(x, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Posterior component probabilities for `x`.
    ///
    /// If every component density underflows, the point is assigned wholly to
    /// the component with the nearest mean.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut terms = vec![0.0; self.k()];
        self.weighted_log_pdfs(x, &mut terms);
        Ok(self.normalize_responsibilities(x, &terms))
    }

    fn normalize_responsibilities(&self, x: &[f64], log_terms: &[f64]) -> Vec<f64> {
        let lse = log_sum_exp(log_terms);
        if !lse.is_finite() {
            return self.nearest_mean_assignment(x);
        }
        let mut r: Vec<f64> = log_terms.iter().map(|t| (t - lse).exp()).collect();
        let s: f64 = r.iter().sum();
        for v in &mut r {
            *v /= s;
        }
        r
    }

    fn nearest_mean_assignment(&self, x: &[f64]) -> Vec<f64> {
        // Scale differences first so that far-away points do not overflow to a tie.
        let scale = self
            .components
            .iter()
            .flat_map(|c| x.iter().zip(c.mean.iter()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        let best = self
            .components
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let d: f64 = x
                    .iter()
                    .zip(c.mean.iter())
                    .map(|(a, b)| ((a - b) / scale).powi(2))
                    .sum();
                (j, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .unwrap_or(0);
        (0..self.k()).map(|j| if j == best { 1.0 } else { 0.0 }).collect()
    }

    /// Sum of log densities over the rows of `data`.
    pub fn log_likelihood(&self, data: &FeatureMatrix) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("log-likelihood of an empty dataset".into()));
        }
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: data.ncols(),
            });
        }
        let mut terms = vec![0.0; self.k()];
        let per_row: Vec<f64> = data
            .rows()
            .map(|x| {
                self.weighted_log_pdfs(x, &mut terms);
                log_sum_exp(&terms)
            })
            .collect();
        Ok(pairwise_sum(&per_row))
    }

    /// Number of free parameters: `K - 1` weights, `K * M` means and
    /// `K * M (M + 1) / 2` covariance entries.
    pub fn parameter_count(&self) -> usize {
        let (k, m) = (self.k(), self.dim());
        k - 1 + k * m + k * m * (m + 1) / 2
    }

    /// Bayesian information criterion; lower is better.
    pub fn bic(&self, data: &FeatureMatrix) -> Result<f64> {
        let ll = self.log_likelihood(data)?;
        Ok(self.parameter_count() as f64 * (data.nrows() as f64).ln() - 2.0 * ll)
    }

    /// Draws `n` points: a component from the weights, then
    /// `mu_j + L_j z` with `z` standard normal. Returns the points and the
    /// component label of each.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(FeatureMatrix, Vec<usize>)> {
        if n == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let m = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cumulative = Vec::with_capacity(self.k());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let last_positive = self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);

        let mut out = FeatureMatrix::zeros(n, m);
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; m];
        for i in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let j = cumulative
                .iter()
                .position(|c| u < *c)
                .unwrap_or(last_positive);
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let c = &self.components[j];
            let row = out.row_mut(i);
            for r in 0..m {
                let mut v = c.mean[r];
                for (k, zk) in z.iter().enumerate().take(r + 1) {
                    v += c.chol[(r, k)] * zk;
                }
                row[r] = v;
            }
            labels.push(j);
        }
        Ok((out, labels))
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            k: self.k(),
            dim: self.dim(),
            space: self.space,
            weights: self.weights.clone(),
            means: (0..self.k()).map(|j| self.mean(j).to_vec()).collect(),
            covariances: (0..self.k()).map(|j| self.covariance(j)).collect(),
            schema_fingerprint: self.schema_fingerprint.clone(),
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self> {
        if f.weights.len() != f.k {
            return Err(Error::Data(format!(
                "model declares k = {} but lists {} weights",
                f.k,
                f.weights.len()
            )));
        }
        if f.means.iter().any(|m| m.len() != f.dim) {
            return Err(Error::Data(format!("model means are not of dimension {}", f.dim)));
        }
        let mut model = GmmModel::new(f.weights, f.means, f.covariances)?;
        model.space = f.space;
        model.schema_fingerprint = f.schema_fingerprint;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&util::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Absolute change in log-likelihood below which EM stops.
    pub tol: f64,
    /// Ridge added to covariance diagonals; `None` uses `1e-6` times the mean
    /// column variance of the data.
    pub reg_floor: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 500,
            tol: 1e-6,
            reg_floor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilitySummary {
    /// Sum of responsibilities per component.
    pub effective_counts: Vec<f64>,
    /// Rows whose largest responsibility belongs to each component.
    pub hard_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    /// Log-likelihood of the initial model followed by one entry per iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub reg_floor: f64,
    pub responsibilities: ResponsibilitySummary,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }

    /// Largest single-step decrease of the trace (0 when non-decreasing).
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihood_trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

fn column_variances(data: &FeatureMatrix) -> Vec<f64> {
    let n = data.nrows() as f64;
    (0..data.ncols())
        .map(|j| {
            let c = data.column(j);
            let mean = pairwise_sum(&c) / n;
            let dev: Vec<f64> = c.iter().map(|v| (v - mean) * (v - mean)).collect();
            pairwise_sum(&dev) / n
        })
        .collect()
}

/// Farthest-point seeding: a random first row, then repeatedly the row farthest
/// from all chosen ones (ties to the lowest index).
fn farthest_point_seeds(data: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.nrows();
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = data
        .rows()
        .map(|r| util::squared_distance(r, data.row(first)))
        .collect();
    while chosen.len() < k {
        let next = (0..n)
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| min_d[a].total_cmp(&min_d[b]).then(b.cmp(&a)))
            .expect("k <= n");
        chosen.push(next);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(util::squared_distance(data.row(i), data.row(next)));
        }
    }
    chosen
}

/// E-step: per-row responsibilities (row-major `n x K`) and the log-likelihood.
fn e_step(model: &GmmModel, data: &FeatureMatrix) -> (Vec<f64>, f64) {
    let k = model.k();
    let mut resp = vec![0.0; data.nrows() * k];
    let mut row_ll = Vec::with_capacity(data.nrows());
    let mut terms = vec![0.0; k];
    for (i, x) in data.rows().enumerate() {
        model.weighted_log_pdfs(x, &mut terms);
        row_ll.push(log_sum_exp(&terms));
        let r = model.normalize_responsibilities(x, &terms);
        resp[i * k..(i + 1) * k].copy_from_slice(&r);
    }
    (resp, pairwise_sum(&row_ll))
}

/// M-step: weights from mean responsibility, weighted means and scatter plus ridge.
fn m_step(data: &FeatureMatrix, resp: &[f64], k: usize, floor: f64) -> Result<GmmModel> {
    let (n, m) = (data.nrows(), data.ncols());
    let mut counts = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            counts[j] += resp[i * k + j];
        }
    }
    let total: f64 = counts.iter().sum();
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let nk = counts[j];
        if !(nk > 0.0) || !nk.is_finite() {
            return Err(Error::numeric(
                format!("component {j}"),
                "component lost all responsibility",
            ));
        }
        let mut mean = DVector::zeros(m);
        for (i, x) in data.rows().enumerate() {
            let g = resp[i * k + j];
            for c in 0..m {
                mean[c] += g * x[c];
            }
        }
        mean /= nk;

        let mut cov = DMatrix::zeros(m, m);
        let mut d = vec![0.0; m];
        for (i, x) in data.rows().enumerate() {
            let g = resp[i * k + j];
            if g == 0.0 {
                continue;
            }
            for c in 0..m {
                d[c] = x[c] - mean[c];
            }
            for r in 0..m {
                let gd = g * d[r];
                for c in r..m {
                    cov[(r, c)] += gd * d[c];
                }
            }
        }
        for r in 0..m {
            for c in r..m {
                let v = cov[(r, c)] / nk;
                cov[(r, c)] = v;
                cov[(c, r)] = v;
            }
            cov[(r, r)] += floor;
        }
        weights.push(nk / total);
        components.push(Component::new(j, mean, cov)?);
    }
    Ok(GmmModel {
        weights,
        components,
        space: ModelSpace::Feature,
        schema_fingerprint: None,
    })
}

fn summarize(resp: &[f64], k: usize) -> ResponsibilitySummary {
    let mut effective_counts = vec![0.0; k];
    let mut hard_counts = vec![0; k];
    for row in resp.chunks_exact(k) {
        let mut best = 0;
        for j in 0..k {
            effective_counts[j] += row[j];
            if row[j] > row[best] {
                best = j;
            }
        }
        hard_counts[best] += 1;
    }
    ResponsibilitySummary {
        effective_counts,
        hard_counts,
    }
}

/// Fits a `k`-component mixture by expectation-maximization.
///
/// Iterates until the log-likelihood changes by less than `config.tol` or
/// `config.max_iter` iterations have run. Deterministic for a fixed seed.
pub fn fit(
    data: &FeatureMatrix,
    k: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<(GmmModel, FitReport)> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if data.nrows() < k {
        return Err(Error::Config(format!(
            "K = {k} exceeds the number of rows ({})",
            data.nrows()
        )));
    }
    if data.ncols() == 0 {
        return Err(Error::Config("data has no feature columns".into()));
    }
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("data contains non-finite values".into()));
    }
    let m = data.ncols();
    let variances = column_variances(data);
    let floor = match config.reg_floor {
        Some(f) if f > 0.0 => f,
        Some(f) => return Err(Error::Config(format!("regularization floor {f} must be positive"))),
        None => {
            let mean_var = variances.iter().sum::<f64>() / m as f64;
            if mean_var > 0.0 {
                1e-6 * mean_var
            } else {
                1e-6
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = farthest_point_seeds(data, k, &mut rng);
    let mut init_cov = DMatrix::zeros(m, m);
    for (c, v) in variances.iter().enumerate() {
        init_cov[(c, c)] = v + floor;
    }
    let components = seeds
        .iter()
        .enumerate()
        .map(|(j, &row)| {
            Component::new(j, DVector::from_column_slice(data.row(row)), init_cov.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        components,
        space: ModelSpace::Feature,
        schema_fingerprint: None,
    };

    let (mut resp, mut ll) = e_step(&model, data);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        model = m_step(data, &resp, k, floor)?;
        iterations += 1;
        let (next_resp, next_ll) = e_step(&model, data);
        resp = next_resp;
        trace.push(next_ll);
        let delta = (next_ll - ll).abs();
        ll = next_ll;
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    if !ll.is_finite() {
        return Err(Error::numeric("EM", "log-likelihood is not finite"));
    }
    let report = FitReport {
        iterations,
        log_likelihood_trace: trace,
        converged,
        reg_floor: floor,
        responsibilities: summarize(&resp, k),
    };
    Ok((model, report))
}
