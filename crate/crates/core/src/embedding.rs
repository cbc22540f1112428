//! Exact t-SNE and a nearest-neighbour inverse map.
//!
//! Conditional affinities are calibrated per row by bisection on the Gaussian
//! precision so that each row's Shannon entropy equals `ln(perplexity)`; the
//! symmetrized joint `P` is matched by Student-t affinities `Q` through gradient
//! descent on `KL(P || Q)` with early exaggeration, momentum and adaptive gains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::util::{pairwise_sum, squared_distance};

/// Target accuracy of each calibrated row entropy, in nats.
pub const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 200;
const Q_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-2;
/// Offset in the inverse-distance weights of [`inverse_decode`].
pub const DECODE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations that use exaggerated `P` and the initial momentum.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub dims: usize,
    pub seed: u64,
    /// The KL divergence is recorded every this many iterations (and at the last one).
    pub kl_every: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            dims: 2,
            seed: 0,
            kl_every: 10,
        }
    }
}

impl EmbeddingConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_perplexity(mut self, perplexity: f64) -> Self {
        self.perplexity = perplexity;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n < 10 {
            return Err(Error::Config(format!("t-SNE needs at least 10 rows, got {n}")));
        }
        if !(self.perplexity > 0.0) || self.perplexity >= (n as f64 - 1.0) / 3.0 {
            return Err(Error::Config(format!(
                "perplexity {} must be positive and below (n - 1) / 3 = {:.3}",
                self.perplexity,
                (n as f64 - 1.0) / 3.0
            )));
        }
        if !(2..=3).contains(&self.dims) {
            return Err(Error::Config(format!("output dimension {} must be 2 or 3", self.dims)));
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) || self.kl_every == 0 {
            return Err(Error::Config(
                "iterations, learning rate and KL interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of calibrating one row of conditional affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    /// `p_{j|i}`, with a zero at the row's own index.
    pub probabilities: Vec<f64>,
    pub entropy: f64,
    /// False if bisection stopped without reaching [`ENTROPY_TOL`].
    pub converged: bool,
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Gaussian affinities `exp(-beta * d)` shifted by the smallest distance, their
/// normalized form and entropy.
fn row_at_beta(d: &[f64], self_index: usize, d_min: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, (o, dj)) in out.iter_mut().zip(d).enumerate() {
        if j == self_index {
            *o = 0.0;
            continue;
        }
        let shifted = dj - d_min;
        let v = (-beta * shifted).exp();
        *o = v;
        z += v;
        weighted += shifted * v;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    z.ln() + beta * weighted / z
}

/// Finds the Gaussian bandwidth for which the conditional distribution over
/// the other points has perplexity `perplexity`.
///
/// `sq_distances` holds squared distances from point `self_index` to every
/// point (including itself). Distances are normalized by their mean before the
/// search, so scaling all distances scales sigma and leaves the probabilities
/// unchanged.
pub fn calibrate_sigma(sq_distances: &[f64], self_index: usize, perplexity: f64) -> Result<Calibration> {
    let n = sq_distances.len();
    if self_index >= n || n < 3 {
        return Err(Error::Config(
            "calibration needs at least two neighbours and a valid self index".into(),
        ));
    }
    if !(perplexity > 0.0) {
        return Err(Error::Config(format!("perplexity {perplexity} must be positive")));
    }
    if sq_distances
        .iter()
        .enumerate()
        .any(|(j, d)| j != self_index && !(d.is_finite() && *d >= 0.0))
    {
        return Err(Error::Data("squared distances must be finite and non-negative".into()));
    }
    let others = n - 1;
    let mean = sq_distances
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != self_index)
        .map(|(_, d)| d)
        .sum::<f64>()
        / others as f64;
    let target = perplexity.ln();
    let mut p = vec![0.0; n];

    if mean == 0.0 {
        // every neighbour coincides with the point: the only distribution is uniform
        let h = row_at_beta(sq_distances, self_index, 0.0, 0.0, &mut p);
        return Ok(Calibration {
            sigma: 0.0,
            probabilities: p,
            entropy: h,
            converged: (h - target).abs() < ENTROPY_TOL,
        });
    }

    let d: Vec<f64> = sq_distances.iter().map(|v| v / mean).collect();
    let d_min = d
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != self_index)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);

    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut best = (f64::INFINITY, beta);
    let mut converged = false;
    for _ in 0..MAX_BISECTION_STEPS {
        let h = row_at_beta(&d, self_index, d_min, beta, &mut p);
        let err = (h - target).abs();
        if err < best.0 {
            best = (err, beta);
        }
        if err < ENTROPY_TOL {
            converged = true;
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    if !converged {
        beta = best.1;
    }
    let h = row_at_beta(&d, self_index, d_min, beta, &mut p);
    // beta acts on distances divided by `mean`: exp(-beta d / mean) = exp(-d / (2 sigma^2))
    let sigma = (mean / (2.0 * beta)).sqrt();
    Ok(Calibration {
        sigma,
        probabilities: p,
        entropy: h,
        converged,
    })
}

fn squared_distance_matrix(data: &FeatureMatrix) -> FeatureMatrix {
    let n = data.nrows();
    let mut d = FeatureMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(data.row(i), data.row(j));
            d.row_mut(i)[j] = v;
            d.row_mut(j)[i] = v;
        }
    }
    d
}

/// Symmetrized joint affinities `P = (p_{j|i} + p_{i|j}) / 2n` together with
/// the number of rows whose calibration did not converge.
pub fn joint_probabilities(data: &FeatureMatrix, perplexity: f64) -> Result<(FeatureMatrix, usize)> {
    let n = data.nrows();
    let d = squared_distance_matrix(data);
    if d.as_slice().iter().all(|v| *v == 0.0) {
        return Err(Error::Data("all rows are identical; nothing to embed".into()));
    }
    let mut cond = FeatureMatrix::zeros(n, n);
    let mut warnings = 0;
    for i in 0..n {
        let c = calibrate_sigma(d.row(i), i, perplexity)?;
        if !c.converged {
            warnings += 1;
        }
        cond.row_mut(i).copy_from_slice(&c.probabilities);
    }
    let mut p = FeatureMatrix::zeros(n, n);
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p.row_mut(i)[j] = (cond.get(i, j) + cond.get(j, i)) / denom;
        }
    }
    Ok((p, warnings))
}

/// Student-t affinities `q_ij = (1 + |y_i - y_j|^2)^-1 / Z` with a zero diagonal.
pub fn student_t_affinities(y: &FeatureMatrix) -> FeatureMatrix {
    let n = y.nrows();
    let mut q = FeatureMatrix::zeros(n, n);
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 / (1.0 + squared_distance(y.row(i), y.row(j)));
            q.row_mut(i)[j] = v;
            q.row_mut(j)[i] = v;
            z += 2.0 * v;
        }
    }
    for i in 0..n {
        for v in q.row_mut(i) {
            *v /= z;
        }
    }
    q
}

/// `sum p ln(p / q)` over off-diagonal entries with `p > 0`; `q` is floored at
/// `1e-12`.
pub fn kl_divergence(p: &FeatureMatrix, q: &FeatureMatrix) -> Result<f64> {
    if p.nrows() != q.nrows() || p.ncols() != q.ncols() {
        return Err(Error::DimensionMismatch {
            expected: p.nrows() * p.ncols(),
            actual: q.nrows() * q.ncols(),
        });
    }
    let mut terms = Vec::with_capacity(p.nrows() * p.ncols());
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let pij = p.get(i, j);
            if i != j && pij > 0.0 {
                terms.push(pij * (pij / q.get(i, j).max(Q_FLOOR)).ln());
            }
        }
    }
    Ok(pairwise_sum(&terms))
}

/// KL divergence between `p` and the Student-t affinities of embedding `y`.
pub fn kl_of_embedding(p: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    kl_divergence(p, &student_t_affinities(y))
}

/// Analytic gradient of `KL(P || Q(y))` with respect to the coordinates:
/// `dC/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)`.
pub fn kl_gradient(p: &FeatureMatrix, y: &FeatureMatrix) -> FeatureMatrix {
    let mut grad = FeatureMatrix::zeros(y.nrows(), y.ncols());
    let mut num = FeatureMatrix::zeros(y.nrows(), y.nrows());
    gradient_into(p, 1.0, y, &mut num, &mut grad);
    grad
}

/// Writes the (optionally exaggerated) gradient into `grad`, reusing `num` for
/// the unnormalized Student-t kernel. Returns the normalizer `Z`.
fn gradient_into(
    p: &FeatureMatrix,
    exaggeration: f64,
    y: &FeatureMatrix,
    num: &mut FeatureMatrix,
    grad: &mut FeatureMatrix,
) -> f64 {
    let (n, dims) = (y.nrows(), y.ncols());
    let mut z = 0.0;
    for i in 0..n {
        num.row_mut(i)[i] = 0.0;
        for j in (i + 1)..n {
            let v = 1.0 / (1.0 + squared_distance(y.row(i), y.row(j)));
            num.row_mut(i)[j] = v;
            num.row_mut(j)[i] = v;
            z += 2.0 * v;
        }
    }
    let mut diff = [0.0; 3];
    for i in 0..n {
        let mut g = [0.0; 3];
        let yi = y.row(i);
        let (p_row, num_row) = (p.row(i), num.row(i));
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = num_row[j];
            let coeff = (exaggeration * p_row[j] - w / z) * w;
            let yj = y.row(j);
            for c in 0..dims {
                diff[c] = yi[c] - yj[c];
                g[c] += coeff * diff[c];
            }
        }
        for (c, out) in grad.row_mut(i).iter_mut().enumerate() {
            *out = 4.0 * g[c];
        }
    }
    z
}

/// Low-dimensional coordinates aligned row-for-row with the source matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: FeatureMatrix,
    pub kl_divergence: f64,
    /// `(iteration, KL)` pairs; iteration numbers are 1-based.
    pub kl_trace: Vec<(usize, f64)>,
    /// Rows whose bandwidth calibration did not reach the entropy tolerance.
    pub calibration_warnings: usize,
    pub config: EmbeddingConfig,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }
}

/// Embeds the rows of `data` with exact t-SNE.
pub fn tsne_embed(data: &FeatureMatrix, config: &EmbeddingConfig) -> Result<Embedding> {
    tsne_embed_with_progress(data, config, |_, _| {})
}

/// As [`tsne_embed`], calling `progress(iteration, kl)` whenever the KL
/// divergence is recorded.
pub fn tsne_embed_with_progress(
    data: &FeatureMatrix,
    config: &EmbeddingConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Embedding> {
    let n = data.nrows();
    config.validate(n)?;
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("embedding input contains non-finite values".into()));
    }
    let (p, calibration_warnings) = joint_probabilities(data, config.perplexity)?;
    let p_log_p: f64 = pairwise_sum(
        &p.as_slice()
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| v * v.ln())
            .collect::<Vec<_>>(),
    );

    let dims = config.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = FeatureMatrix::zeros(n, dims);
    for i in 0..n {
        for v in y.row_mut(i) {
            *v = INIT_STD * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut update = FeatureMatrix::zeros(n, dims);
    let mut gains = FeatureMatrix::from_row_major(n, dims, vec![1.0; n * dims])?;
    let mut grad = FeatureMatrix::zeros(n, dims);
    let mut num = FeatureMatrix::zeros(n, n);
    let mut kl_trace = Vec::new();

    for iter in 1..=config.iterations {
        let early = iter <= config.exaggeration_iterations;
        let exaggeration = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let z = gradient_into(&p, exaggeration, &y, &mut num, &mut grad);

        for i in 0..n {
            for c in 0..dims {
                let g = grad.get(i, c);
                let u = update.get(i, c);
                let gain = &mut gains.row_mut(i)[c];
                *gain = if (g > 0.0) == (u > 0.0) {
                    (*gain * 0.8).max(MIN_GAIN)
                } else {
                    *gain + 0.2
                };
                let step = momentum * u - config.learning_rate * *gain * g;
                update.row_mut(i)[c] = step;
                y.row_mut(i)[c] += step;
            }
        }
        recenter(&mut y);

        if iter == 1 || iter % config.kl_every == 0 || iter == config.iterations {
            // KL of the coordinates the gradient was evaluated at, using the
            // kernel already in `num`: sum p ln p - sum p ln(num / Z)
            let mut cross = Vec::with_capacity(n * n);
            for i in 0..n {
                let (p_row, num_row) = (p.row(i), num.row(i));
                for j in 0..n {
                    if i != j && p_row[j] > 0.0 {
                        cross.push(p_row[j] * (num_row[j] / z).max(Q_FLOOR).ln());
                    }
                }
            }
            let kl = p_log_p - pairwise_sum(&cross);
            if !kl.is_finite() {
                return Err(Error::numeric("t-SNE", format!("KL divergence diverged at iteration {iter}")));
            }
            kl_trace.push((iter, kl));
            progress(iter, kl);
        }
    }
    if y.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("t-SNE", "coordinates are not finite"));
    }
    let final_kl = kl_of_embedding(&p, &y)?;
    kl_trace.push((config.iterations + 1, final_kl));
    Ok(Embedding {
        coords: y,
        kl_divergence: final_kl,
        kl_trace,
        calibration_warnings,
        config: *config,
    })
}

fn recenter(y: &mut FeatureMatrix) {
    let (n, dims) = (y.nrows(), y.ncols());
    for c in 0..dims {
        let mean = y.column(c).iter().sum::<f64>() / n as f64;
        for i in 0..n {
            y.row_mut(i)[c] -= mean;
        }
    }
}

/// Result of mapping an embedding-space point back to feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseDecoded {
    pub vector: Vec<f64>,
    /// `(row index, embedding distance)` of the neighbours used, nearest first.
    pub neighbors: Vec<(usize, f64)>,
}

/// Inverse-distance-weighted average of the source rows of the `k` embedded
/// rows nearest to `point` (weights `1 / (d + 1e-9)`, ties broken by row index).
pub fn inverse_decode(
    coords: &FeatureMatrix,
    source: &FeatureMatrix,
    point: &[f64],
    k: usize,
) -> Result<InverseDecoded> {
    let n = coords.nrows();
    if source.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: source.nrows(),
        });
    }
    if point.len() != coords.ncols() {
        return Err(Error::DimensionMismatch {
            expected: coords.ncols(),
            actual: point.len(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must lie in 1..={n}")));
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("decode point must be finite".into()));
    }
    let mut dist: Vec<(usize, f64)> = coords
        .rows()
        .enumerate()
        .map(|(i, r)| (i, squared_distance(r, point).sqrt()))
        .collect();
    dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dist.truncate(k);

    let weights: Vec<f64> = dist.iter().map(|(_, d)| 1.0 / (d + DECODE_EPS)).collect();
    let total: f64 = weights.iter().sum();
    let mut vector = vec![0.0; source.ncols()];
    for ((i, _), w) in dist.iter().zip(&weights) {
        let w = w / total;
        for (v, s) in vector.iter_mut().zip(source.row(*i)) {
            *v += w * s;
        }
    }
    Ok(InverseDecoded {
        vector,
        neighbors: dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, m: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        FeatureMatrix::from_row_major(n, m, data).unwrap()
    }

    fn two_blobs(per: usize, gap: f64, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for centre in [0.0, gap] {
            for _ in 0..per {
                rows.push(
                    (0..5)
                        .map(|c| if c == 0 { centre } else { 0.0 } + 0.1 * rng.sample::<f64, _>(StandardNormal))
                        .collect::<Vec<_>>(),
                );
            }
        }
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn equidistant_points_share_probability() {
        for perplexity in [1.5, 2.0] {
            let c = calibrate_sigma(&[0.0, 4.0, 4.0], 0, perplexity).unwrap();
            assert_eq!(c.probabilities, vec![0.0, 0.5, 0.5]);
        }
        let c = calibrate_sigma(&[0.0, 4.0, 4.0], 0, 2.0).unwrap();
        assert!(c.converged);
        let c = calibrate_sigma(&[0.0, 4.0, 4.0], 0, 1.5).unwrap();
        assert!(!c.converged, "perplexity below 2 is unreachable with two equal neighbours");
    }

    #[test]
    fn calibrated_entropy_matches_target() {
        let x = random_matrix(200, 6, 1);
        let d = squared_distance_matrix(&x);
        for i in 0..200 {
            let c = calibrate_sigma(d.row(i), i, 30.0).unwrap();
            assert!(c.converged);
            assert!((entropy(&c.probabilities) - 30f64.ln()).abs() < ENTROPY_TOL);
            assert_eq!(c.probabilities[i], 0.0);
            assert!((c.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_is_scale_invariant() {
        let x = random_matrix(60, 4, 2);
        let d = squared_distance_matrix(&x);
        let row = d.row(3).to_vec();
        let doubled: Vec<f64> = row.iter().map(|v| 2.0 * v).collect();
        let a = calibrate_sigma(&row, 3, 10.0).unwrap();
        let b = calibrate_sigma(&doubled, 3, 10.0).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
        assert!((b.sigma / a.sigma - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn joint_probabilities_are_symmetric_and_normalized() {
        let x = random_matrix(80, 3, 3);
        let (p, warnings) = joint_probabilities(&x, 15.0).unwrap();
        assert_eq!(warnings, 0);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for i in 0..80 {
            assert_eq!(p.get(i, i), 0.0);
            for j in 0..80 {
                assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
    }

    #[test]
    fn kl_divergence_oracle_and_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut random_affinity = || {
            let mut m = FeatureMatrix::zeros(5, 5);
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        m.row_mut(i)[j] = rng.random::<f64>();
                    }
                }
            }
            let s: f64 = m.as_slice().iter().sum();
            FeatureMatrix::from_row_major(5, 5, m.as_slice().iter().map(|v| v / s).collect()).unwrap()
        };
        for _ in 0..20 {
            let (p, q) = (random_affinity(), random_affinity());
            let mut oracle = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    if i != j && p.get(i, j) > 0.0 {
                        oracle += p.get(i, j) * (p.get(i, j) / q.get(i, j)).ln();
                    }
                }
            }
            let kl = kl_divergence(&p, &q).unwrap();
            assert!((kl - oracle).abs() < 1e-12);
            assert!(kl >= 0.0);
            assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random_matrix(10, 4, 5);
        let (p, _) = joint_probabilities(&x, 2.5).unwrap();
        let y = random_matrix(10, 2, 6);
        let g = kl_gradient(&p, &y);
        let h = 1e-5;
        for i in 0..10 {
            for c in 0..2 {
                let mut plus = y.clone();
                plus.row_mut(i)[c] += h;
                let mut minus = y.clone();
                minus.row_mut(i)[c] -= h;
                let fd = (kl_of_embedding(&p, &plus).unwrap() - kl_of_embedding(&p, &minus).unwrap()) / (2.0 * h);
                let rel = (fd - g.get(i, c)).abs() / g.get(i, c).abs().max(1e-8);
                assert!(rel < 1e-5, "({i},{c}): analytic {} vs fd {fd}", g.get(i, c));
            }
        }
    }

    #[test]
    fn config_preconditions() {
        let x = random_matrix(9, 2, 7);
        assert!(tsne_embed(&x, &EmbeddingConfig::default().with_perplexity(2.0)).is_err());
        let x = random_matrix(40, 2, 7);
        assert!(tsne_embed(&x, &EmbeddingConfig::default()).is_err(), "perplexity 30 needs n > 91");
        let same = FeatureMatrix::from_row_major(40, 2, vec![1.0; 80]).unwrap();
        let err = tsne_embed(&same, &EmbeddingConfig::default().with_perplexity(5.0)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn separated_blobs_stay_separated() {
        let x = two_blobs(50, 20.0, 8);
        let cfg = EmbeddingConfig::default().with_seed(3);
        let e = tsne_embed(&x, &cfg).unwrap();
        assert_eq!(e.len(), 100);
        // midpoint split along the direction joining the two cluster centroids
        let centroid = |range: std::ops::Range<usize>| {
            let mut c = [0.0; 2];
            for i in range.clone() {
                c[0] += e.coords.get(i, 0);
                c[1] += e.coords.get(i, 1);
            }
            [c[0] / range.len() as f64, c[1] / range.len() as f64]
        };
        let (a, b) = (centroid(0..50), centroid(50..100));
        let dir = [b[0] - a[0], b[1] - a[1]];
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let correct = (0..100)
            .filter(|&i| {
                let s = (e.coords.get(i, 0) - mid[0]) * dir[0] + (e.coords.get(i, 1) - mid[1]) * dir[1];
                (s > 0.0) == (i >= 50)
            })
            .count();
        assert_eq!(correct, 100);
        let first_after = e.kl_trace.iter().find(|(it, _)| *it > 250).unwrap().1;
        assert!(e.kl_divergence < first_after);
        assert!(e.kl_divergence < e.kl_trace[0].1);
    }

    #[test]
    fn embedding_is_deterministic_per_seed() {
        let x = random_matrix(30, 3, 9);
        let cfg = EmbeddingConfig {
            perplexity: 5.0,
            iterations: 300,
            ..EmbeddingConfig::default()
        };
        assert_eq!(tsne_embed(&x, &cfg).unwrap(), tsne_embed(&x, &cfg).unwrap());
    }

    #[test]
    fn inverse_decode_cases() {
        let coords = FeatureMatrix::from_rows([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]]).unwrap();
        let source = FeatureMatrix::from_rows([[1.0, 10.0], [3.0, 20.0], [9.0, 90.0]]).unwrap();
        let one = inverse_decode(&coords, &source, &[0.4, 0.1], 1).unwrap();
        assert_eq!(one.vector, vec![1.0, 10.0]);
        let mid = inverse_decode(&coords, &source, &[1.0, 0.0], 2).unwrap();
        assert!((mid.vector[0] - 2.0).abs() < 1e-12 && (mid.vector[1] - 15.0).abs() < 1e-12);
        let on = inverse_decode(&coords, &source, &[5.0, 5.0], 3).unwrap();
        assert!((on.vector[0] - 9.0).abs() < 1e-6);
        assert!(inverse_decode(&coords, &source, &[0.0, 0.0], 0).is_err());
        assert!(inverse_decode(&coords, &source, &[0.0, 0.0], 4).is_err());
    }

    #[test]
    fn inverse_decode_ignores_rigid_motions() {
        let coords = random_matrix(40, 2, 10);
        let source = random_matrix(40, 5, 11);
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let moved = FeatureMatrix::from_rows(
            coords.rows().map(|r| [c * r[0] - s * r[1] + 4.0, s * r[0] + c * r[1] - 1.0]),
        )
        .unwrap();
        let p = [0.2, -0.4];
        let q = [c * p[0] - s * p[1] + 4.0, s * p[0] + c * p[1] - 1.0];
        let a = inverse_decode(&coords, &source, &p, 5).unwrap();
        let b = inverse_decode(&moved, &source, &q, 5).unwrap();
        assert_eq!(
            a.neighbors.iter().map(|n| n.0).collect::<Vec<_>>(),
            b.neighbors.iter().map(|n| n.0).collect::<Vec<_>>()
        );
        for (x, y) in a.vector.iter().zip(&b.vector) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
