//! Synthetic spectrogram family with known style factors, plus estimators
//! that read the factors back off a matrix. Ridge position, ridge swing and
//! peak energy are recoverable by construction, which makes the generator
//! its own measurement oracle for the end-to-end evaluation.

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;
use crate::numerics::rng::RngStream;

/// Mel bands per frame.
pub const BANDS: usize = 32;
/// Frames per clip.
pub const FRAMES: usize = 64;
/// Gaussian ridge width in bands.
pub const RIDGE_WIDTH: f64 = 1.5;
/// Number of content classes.
pub const CONTENT_VOCAB: usize = 8;
/// Largest entry any clip can attain (peak energy times unit envelope).
pub const ENERGY_MAX: f64 = 1.5;
pub const ENERGY_MIN: f64 = 0.5;
pub const PITCH_MIN: f64 = 8.0;
pub const PITCH_MAX: f64 = 24.0;
pub const VAR_MIN: f64 = 0.0;
pub const VAR_MAX: f64 = 6.0;

/// Ground-truth style of one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleFactors {
    /// Peak energy, in [0.5, 1.5].
    pub energy: f64,
    /// Mean ridge position in bands, in [8, 24].
    pub pitch_level: f64,
    /// Ridge swing amplitude in bands, in [0, 6].
    pub pitch_var: f64,
    /// Content class, in 0..8.
    pub content: usize,
}

impl StyleFactors {
    pub fn new(energy: f64, pitch_level: f64, pitch_var: f64, content: usize) -> Result<Self> {
        let ok = (ENERGY_MIN..=ENERGY_MAX).contains(&energy)
            && (PITCH_MIN..=PITCH_MAX).contains(&pitch_level)
            && (VAR_MIN..=VAR_MAX).contains(&pitch_var)
            && content < CONTENT_VOCAB;
        if !ok {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "StyleFactors out of range: E={energy}, P={pitch_level}, V={pitch_var}, c={content}"
                ),
            });
        }
        Ok(StyleFactors { energy, pitch_level, pitch_var, content })
    }
}

/// One clip: 32 bands by 64 frames, entries in [0, 1.5].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMel {
    mat: Array,
}

impl ToyMel {
    /// Validates shape, finiteness and the [0, ENERGY_MAX] value range.
    pub fn new(mat: Array) -> Result<Self> {
        if mat.shape() != [BANDS, FRAMES] {
            return Err(CoreError::ShapeMismatch {
                context: "ToyMel::new",
                expected: vec![BANDS, FRAMES],
                got: mat.shape().to_vec(),
            });
        }
        mat.validate_finite("ToyMel::new")?;
        if mat.data().iter().any(|&v| !(0.0..=ENERGY_MAX).contains(&v)) {
            return Err(CoreError::InvalidArgument {
                context: "ToyMel::new: entries must lie in [0, 1.5]".to_string(),
            });
        }
        Ok(ToyMel { mat })
    }

    /// Clamps a raw matrix into the legal value range and wraps it. Used
    /// for model outputs, which may stray slightly outside.
    pub fn from_raw_clamped(mut mat: Array) -> Result<Self> {
        mat.validate_finite("ToyMel::from_raw_clamped")?;
        for v in mat.data_mut() {
            *v = v.clamp(0.0, ENERGY_MAX);
        }
        ToyMel::new(mat)
    }

    pub fn mat(&self) -> &Array {
        &self.mat
    }

    /// Entry at band `f`, frame `l`.
    pub fn at(&self, f: usize, l: usize) -> f64 {
        self.mat.at(f, l)
    }

    /// One frame as a contiguous band vector.
    pub fn frame(&self, l: usize) -> Vec<f64> {
        (0..BANDS).map(|f| self.mat.at(f, l)).collect()
    }
}

/// Ridge center at frame `l` for the given factors.
fn ridge_center(s: &StyleFactors, l: usize) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * s.content as f64 / CONTENT_VOCAB as f64;
    let angle = 2.0 * std::f64::consts::PI * l as f64 / FRAMES as f64 + phase;
    s.pitch_level + s.pitch_var * angle.sin()
}

/// Temporal envelope at frame `l`: 0.7 + 0.3 cos(2 pi k l / L) with
/// k = 1 + (content mod 3). Every class attains exactly 1 at l = 0.
fn envelope(content: usize, l: usize) -> f64 {
    let k = (1 + content % 3) as f64;
    0.7 + 0.3 * (2.0 * std::f64::consts::PI * k * l as f64 / FRAMES as f64).cos()
}

/// Renders the deterministic clip for a factor setting.
pub fn gen_toy_mel(s: &StyleFactors) -> ToyMel {
    let mut mat = Array::zeros(vec![BANDS, FRAMES]);
    for l in 0..FRAMES {
        let mu = ridge_center(s, l);
        let env = envelope(s.content, l);
        for f in 0..BANDS {
            let d = f as f64 - mu;
            let g = (-d * d / (2.0 * RIDGE_WIDTH * RIDGE_WIDTH)).exp();
            *mat.at_mut(f, l) = s.energy * g * env;
        }
    }
    ToyMel { mat }
}

/// Style read back from a matrix by the ridge estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorEstimate {
    pub energy: f64,
    pub pitch_level: f64,
    pub pitch_var: f64,
}

/// The envelope family attains its maximum of 1 at frame 0 for every
/// content class, so the family-wide energy normalizer is 1.
const ENV_FAMILY_MAX: f64 = 1.0;

/// Reads (energy, pitch level, pitch swing) off a matrix.
///
/// Per frame, the band argmax is refined by a parabolic fit to the log
/// values of the three bands around the peak; for a pure Gaussian ridge the
/// fit recovers both the center and the peak height exactly. Pitch level is
/// the ridge mean over frames, pitch swing the half-range, and energy the
/// largest refined peak divided by the envelope normalizer.
pub fn estimate_factors(mel: &ToyMel) -> Result<FactorEstimate> {
    const FLOOR: f64 = 1e-12;
    let mut ridge = Vec::with_capacity(FRAMES);
    let mut peak = f64::NEG_INFINITY;
    for l in 0..FRAMES {
        let col: Vec<f64> = (0..BANDS).map(|f| mel.at(f, l)).collect();
        let mut best = 0usize;
        for f in 1..BANDS {
            if col[f] > col[best] {
                best = f;
            }
        }
        if col[best] <= FLOOR {
            continue; // silent frame carries no ridge information
        }
        let (center, height) = if best == 0 || best == BANDS - 1 {
            (best as f64, col[best])
        } else {
            let ym = col[best - 1].max(FLOOR).ln();
            let y0 = col[best].max(FLOOR).ln();
            let yp = col[best + 1].max(FLOOR).ln();
            let denom = ym + yp - 2.0 * y0;
            if denom >= -1e-12 {
                (best as f64, col[best])
            } else {
                let delta = ((ym - yp) / (2.0 * denom)).clamp(-0.5, 0.5);
                let peak_log = y0 - (yp - ym) * (yp - ym) / (8.0 * denom);
                ((best as f64 + delta).clamp(0.0, (BANDS - 1) as f64), peak_log.exp())
            }
        };
        ridge.push(center);
        if height > peak {
            peak = height;
        }
    }
    if ridge.is_empty() {
        return Err(CoreError::EstimationFailed {
            context: "estimate_factors: no frame carries energy".to_string(),
        });
    }
    let n = ridge.len() as f64;
    let mean = ridge.iter().sum::<f64>() / n;
    let max = ridge.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ridge.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(FactorEstimate {
        energy: peak / ENV_FAMILY_MAX,
        pitch_level: mean,
        pitch_var: (max - min) / 2.0,
    })
}

/// One dataset record: the clip, its generating factors, and the aligned
/// content id sequence (the id repeated per frame; alignment is fixed by
/// construction).
#[derive(Debug, Clone)]
pub struct ToySample {
    pub mel: ToyMel,
    pub factors: StyleFactors,
    pub content_seq: Vec<usize>,
}

/// Factor-sampled dataset with fixed index-based splits.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    samples: Vec<ToySample>,
    train_end: usize,
    val_end: usize,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &ToySample {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[ToySample] {
        &self.samples
    }

    pub fn train(&self) -> &[ToySample] {
        &self.samples[..self.train_end]
    }

    pub fn val(&self) -> &[ToySample] {
        &self.samples[self.train_end..self.val_end]
    }

    pub fn test(&self) -> &[ToySample] {
        &self.samples[self.val_end..]
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.train_end
    }
}

/// Draws `n` clips with independent uniform factors and splits them
/// 80/10/10 by index.
pub fn make_dataset(n: usize, seed: u64) -> Result<ToyDataset> {
    if n < 10 {
        return Err(CoreError::InvalidArgument {
            context: format!("make_dataset: need at least 10 samples, got {n}"),
        });
    }
    let mut rng = RngStream::new(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let factors = StyleFactors::new(
            rng.uniform(ENERGY_MIN, ENERGY_MAX),
            rng.uniform(PITCH_MIN, PITCH_MAX),
            rng.uniform(VAR_MIN, VAR_MAX),
            rng.uniform_usize(CONTENT_VOCAB),
        )?;
        samples.push(ToySample {
            mel: gen_toy_mel(&factors),
            factors,
            content_seq: vec![factors.content; FRAMES],
        });
    }
    Ok(ToyDataset { samples, train_end: n * 8 / 10, val_end: n * 9 / 10 })
}
