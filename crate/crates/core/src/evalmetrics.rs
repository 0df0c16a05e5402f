//! Objective metrics: Fréchet distance between feature Gaussians, mel
//! cepstral distortion on frame-aligned pairs, and a latent-traversal
//! disentanglement score built on the toy generator's factor estimators.

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;
use crate::toydata::{estimate_factors, ToyMel, ToySample, BANDS, FRAMES};
use nalgebra::{DMatrix, DVector};

/// Fitted Gaussian summary of a feature cloud.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    mean: Vec<f64>,
    cov: Array,
}

impl GaussianStats {
    /// Covariance must be square, match the mean dim, and be symmetric
    /// within 1e-10.
    pub fn new(mean: Vec<f64>, cov: Array) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != [d, d] {
            return Err(CoreError::ShapeMismatch {
                context: "GaussianStats::new",
                expected: vec![d, d],
                got: cov.shape().to_vec(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { context: "GaussianStats mean".to_string() });
        }
        cov.validate_finite("GaussianStats cov")?;
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov.at(i, j) - cov.at(j, i)).abs() > 1e-10 {
                    return Err(CoreError::InvalidArgument {
                        context: format!("GaussianStats covariance asymmetric at ({i},{j})"),
                    });
                }
            }
        }
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Array {
        &self.cov
    }
}

/// Sample mean and unbiased sample covariance of the given vectors.
pub fn fit_gaussian(rows: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = rows.len();
    if n < 2 {
        return Err(CoreError::InvalidArgument {
            context: format!("fit_gaussian: need at least 2 vectors, got {n}"),
        });
    }
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(CoreError::ShapeMismatch {
                context: "fit_gaussian",
                expected: vec![d],
                got: vec![r.len()],
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { context: format!("fit_gaussian row {i}") });
        }
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Array::zeros(vec![d, d]);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                *cov.at_mut(i, j) += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.at(i, j) / denom;
            *cov.at_mut(i, j) = v;
            *cov.at_mut(j, i) = v;
        }
    }
    GaussianStats::new(mean, cov)
}

fn to_dmatrix(a: &Array) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), a.cols(), |i, j| a.at(i, j))
}

/// Symmetric PSD square root; eigenvalues pushed negative by round-off are
/// clamped to 0.
fn sym_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.symmetric_eigen();
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// ‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2}).
///
/// The cross term is evaluated as Tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}), which
/// keeps every decomposition symmetric.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "frechet_distance",
            expected: vec![a.dim()],
            got: vec![b.dim()],
        });
    }
    let mut mean_term = 0.0;
    for (x, y) in a.mean().iter().zip(b.mean()) {
        mean_term += (x - y) * (x - y);
    }
    let ca = to_dmatrix(a.cov());
    let cb = to_dmatrix(b.cov());
    let a_half = sym_sqrt(ca.clone());
    let mut inner = &a_half * &cb * &a_half;
    // Symmetrize before the second decomposition; the product picks up
    // asymmetry at round-off scale.
    let inner_t = inner.transpose();
    inner = (inner + inner_t) * 0.5;
    let eig = inner.symmetric_eigen();
    let cross: f64 = eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).sum();
    Ok(mean_term + ca.trace() + cb.trace() - 2.0 * cross)
}

/// Log floor applied before the cepstral transform.
const MCD_LOG_FLOOR: f64 = 1e-5;
/// Cepstral coefficients used (1..=13; the 0th carries overall scale and is
/// excluded).
const MCD_COEFFS: usize = 13;

/// Orthonormal type-II DCT coefficients 0..=kmax of `x`.
fn dct2(x: &[f64], kmax: usize) -> Vec<f64> {
    let n = x.len() as f64;
    let mut out = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        let mut acc = 0.0;
        for (i, &v) in x.iter().enumerate() {
            acc += v * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos();
        }
        out.push(scale * acc);
    }
    out
}

/// Mel cepstral distortion between frame-aligned clips: per frame,
/// (10/ln 10)·√(2 Σ_{k=1}^{13} (c_k − c'_k)²) over cepstra of
/// log(mel + 1e-5), averaged over frames. No time alignment is performed;
/// the clip type fixes both shapes.
pub fn mcd(a: &ToyMel, b: &ToyMel) -> f64 {
    let scale = 10.0 / std::f64::consts::LN_10;
    let mut total = 0.0;
    for l in 0..FRAMES {
        let la: Vec<f64> = (0..BANDS).map(|f| (a.at(f, l) + MCD_LOG_FLOOR).ln()).collect();
        let lb: Vec<f64> = (0..BANDS).map(|f| (b.at(f, l) + MCD_LOG_FLOOR).ln()).collect();
        let ca = dct2(&la, MCD_COEFFS);
        let cb = dct2(&lb, MCD_COEFFS);
        let mut ss = 0.0;
        for k in 1..=MCD_COEFFS {
            let d = ca[k] - cb[k];
            ss += d * d;
        }
        total += scale * (2.0 * ss).sqrt();
    }
    total / FRAMES as f64
}

/// Per-sample feature vector for Fréchet evaluation: the mean of each band
/// over frames, followed by the three estimated style factors. Fails when
/// the clip is silent enough that no factors can be read.
pub fn mel_features(mel: &ToyMel) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(BANDS + 3);
    for f in 0..BANDS {
        let mut acc = 0.0;
        for l in 0..FRAMES {
            acc += mel.at(f, l);
        }
        out.push(acc / FRAMES as f64);
    }
    let est = estimate_factors(mel)?;
    out.push(est.energy);
    out.push(est.pitch_level);
    out.push(est.pitch_var);
    Ok(out)
}

/// Pearson correlation. Errors on length mismatch, fewer than 2 points, or
/// zero variance in either series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CoreError::ShapeMismatch {
            context: "pearson",
            expected: vec![x.len()],
            got: vec![y.len()],
        });
    }
    if x.len() < 2 {
        return Err(CoreError::InvalidArgument {
            context: "pearson: need at least 2 points".to_string(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 1e-18 || syy <= 1e-18 {
        return Err(CoreError::EstimationFailed {
            context: "pearson: zero-variance series".to_string(),
        });
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// What the traversal scorer needs from a trained model: a posterior-mean
/// encoder and a latent-to-clip synthesizer.
pub trait LatentSynth {
    fn latent_dim(&self) -> usize;
    fn encode_mean(&self, mel: &ToyMel) -> Result<Vec<f64>>;
    fn synth_from_latent(&self, z: &[f64], content: usize) -> Result<ToyMel>;
}

/// Number of evenly spaced traversal points per dimension.
const TRAVERSAL_POINTS: usize = 9;
/// Content class used for all traversals.
const TRAVERSAL_CONTENT: usize = 0;

/// Names of the three scored factors, in report order.
pub const FACTOR_NAMES: [&str; 3] = ["energy", "pitch_level", "pitch_var"];

/// Traversal result for one latent dimension.
#[derive(Debug, Clone)]
pub struct DimTraversal {
    pub dim: usize,
    /// Signed Pearson r against (energy, pitch level, pitch swing);
    /// 0 where the factor did not move.
    pub r: [f64; 3],
    /// max_f |r| / Σ_f |r|; 1 means the dimension moves a single factor.
    pub exclusivity: f64,
    /// Set when the traversal could not produce measurable variation.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ExclusivityReport {
    pub dims: Vec<DimTraversal>,
    /// Best (highest-|r|, non-degenerate) dimension per factor.
    pub best: [Option<usize>; 3],
}

impl ExclusivityReport {
    /// |r| of factor `f` at its best dimension, 0 when none qualified.
    pub fn best_abs_r(&self, f: usize) -> f64 {
        self.best[f].map(|d| self.dims[d].r[f].abs()).unwrap_or(0.0)
    }

    pub fn best_exclusivity(&self, f: usize) -> f64 {
        self.best[f].map(|d| self.dims[d].exclusivity).unwrap_or(0.0)
    }
}

/// Scores how exclusively each latent dimension controls one style factor.
///
/// Every dimension is traversed over ±2σ around the dataset-mean latent,
/// where σ is the per-dimension spread of the posterior means across the
/// dataset; the factor estimates of the synthesized clips are then
/// correlated with the traversal values. Dimensions whose spread or whose
/// outputs carry no variation are flagged degenerate and score 0.
pub fn exclusivity_score(
    model: &dyn LatentSynth,
    dataset: &[ToySample],
) -> Result<ExclusivityReport> {
    if dataset.len() < 2 {
        return Err(CoreError::InvalidArgument {
            context: "exclusivity_score: need at least 2 samples".to_string(),
        });
    }
    let d = model.latent_dim();
    let mut means = Vec::with_capacity(dataset.len());
    for s in dataset {
        let m = model.encode_mean(&s.mel)?;
        if m.len() != d {
            return Err(CoreError::ShapeMismatch {
                context: "exclusivity_score: encode_mean",
                expected: vec![d],
                got: vec![m.len()],
            });
        }
        means.push(m);
    }
    let n = means.len() as f64;
    let mut base = vec![0.0; d];
    for m in &means {
        for (b, &v) in base.iter_mut().zip(m) {
            *b += v;
        }
    }
    for b in &mut base {
        *b /= n;
    }
    let mut sigma = vec![0.0; d];
    for m in &means {
        for (s, (&v, &b)) in sigma.iter_mut().zip(m.iter().zip(&base)) {
            *s += (v - b) * (v - b);
        }
    }
    for s in &mut sigma {
        *s = (*s / n).sqrt();
    }

    let mut dims = Vec::with_capacity(d);
    for dim in 0..d {
        dims.push(traverse_one_dim(model, &base, dim, sigma[dim])?);
    }
    let mut best = [None::<usize>; 3];
    for f in 0..3 {
        let mut top = 0.0;
        for t in &dims {
            if !t.degenerate && t.r[f].abs() > top {
                top = t.r[f].abs();
                best[f] = Some(t.dim);
            }
        }
    }
    Ok(ExclusivityReport { dims, best })
}

fn traverse_one_dim(
    model: &dyn LatentSynth,
    base: &[f64],
    dim: usize,
    sigma: f64,
) -> Result<DimTraversal> {
    let degenerate = DimTraversal { dim, r: [0.0; 3], exclusivity: 0.0, degenerate: true };
    if sigma <= 1e-12 {
        return Ok(degenerate);
    }
    let mut values = Vec::with_capacity(TRAVERSAL_POINTS);
    let mut series: [Vec<f64>; 3] = Default::default();
    let mut z = base.to_vec();
    for i in 0..TRAVERSAL_POINTS {
        let t = i as f64 / (TRAVERSAL_POINTS - 1) as f64;
        let v = base[dim] - 2.0 * sigma + 4.0 * sigma * t;
        z[dim] = v;
        let mel = model.synth_from_latent(&z, TRAVERSAL_CONTENT)?;
        let est = match estimate_factors(&mel) {
            Ok(e) => e,
            // A silent output means the traversal left the model's usable
            // range; the dimension is unscorable, not an error.
            Err(CoreError::EstimationFailed { .. }) => return Ok(degenerate),
            Err(e) => return Err(e),
        };
        values.push(v);
        series[0].push(est.energy);
        series[1].push(est.pitch_level);
        series[2].push(est.pitch_var);
    }
    let mut r = [0.0; 3];
    let mut any = false;
    for f in 0..3 {
        match pearson(&values, &series[f]) {
            Ok(c) => {
                r[f] = c;
                any = true;
            }
            Err(CoreError::EstimationFailed { .. }) => r[f] = 0.0,
            Err(e) => return Err(e),
        }
    }
    let total: f64 = r.iter().map(|c| c.abs()).sum();
    if !any || total <= 1e-12 {
        return Ok(degenerate);
    }
    let peak = r.iter().map(|c| c.abs()).fold(0.0, f64::max);
    Ok(DimTraversal { dim, r, exclusivity: peak / total, degenerate: false })
}
