//! Vector quantization against a codebook maintained by exponential moving
//! averages, with the straight-through estimator for the encoder gradient.

use crate::error::{CoreError, Result};
use crate::numerics::adam::round_f32;
use crate::numerics::array::Array;
use crate::numerics::rng::RngStream;

/// Codebook of `K` entries in `D` dimensions plus EMA accumulators.
///
/// In EMA mode (the default) entries never receive task-loss gradient; they
/// follow smoothed cluster statistics instead. The non-EMA mode keeps the
/// two-term quantization loss so the codebook can be trained by gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub entries: Array,
    /// Smoothed assignment counts, one per entry.
    pub ema_counts: Vec<f64>,
    /// Smoothed sums of assigned vectors, one row per entry.
    pub ema_sums: Array,
    pub decay: f64,
    pub smoothing: f64,
    pub ema_mode: bool,
}

impl Codebook {
    /// Entries drawn from N(0, 1/D); accumulators start with unit count and
    /// the entry itself as the running sum, so a fresh entry is a fixed
    /// point of the update until vectors are assigned to it.
    pub fn new(k: usize, d: usize, rng: &mut RngStream) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(CoreError::InvalidArgument {
                context: format!("Codebook::new: k={k}, d={d}"),
            });
        }
        let std = (1.0 / d as f64).sqrt();
        let entries = Array::from_fn(vec![k, d], |_| round_f32(rng.normal() * std));
        Ok(Codebook {
            ema_counts: vec![1.0; k],
            ema_sums: entries.clone(),
            entries,
            decay: 0.99,
            smoothing: 1e-5,
            ema_mode: true,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        self.entries.row(k)
    }
}

/// Nearest codebook entry by squared Euclidean distance; ties resolve to
/// the smallest index. Returns the entry (copied) and its index.
pub fn nearest_code(book: &Codebook, z: &[f64]) -> Result<(Vec<f64>, usize)> {
    if z.len() != book.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "nearest_code input",
            expected: vec![book.dim()],
            got: vec![z.len()],
        });
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for k in 0..book.len() {
        let e = book.entry(k);
        let mut dist = 0.0;
        for (zi, ei) in z.iter().zip(e) {
            let d = zi - ei;
            dist += d * d;
        }
        if dist < best_dist {
            best_dist = dist;
            best = k;
        }
    }
    Ok((book.entry(best).to_vec(), best))
}

/// Quantization loss for one vector pair, summed over dimensions.
///
/// EMA mode keeps only the commitment term `gamma * |z - sg(q)|^2`; with
/// EMA disabled the codebook term `|sg(z) - q|^2` is added.
pub fn vq_loss(z: &[f64], q: &[f64], gamma: f64, ema_mode: bool) -> Result<f64> {
    if z.len() != q.len() {
        return Err(CoreError::ShapeMismatch {
            context: "vq_loss inputs",
            expected: vec![z.len()],
            got: vec![q.len()],
        });
    }
    let sq: f64 = z.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if ema_mode { gamma * sq } else { sq + gamma * sq })
}

/// Gradients of [`vq_loss`] with respect to `z` and `q`. The stop-gradient
/// markers route each term to exactly one side: the commitment term reaches
/// only `z`, the codebook term only `q` (and only when EMA is disabled).
pub fn vq_loss_backward(
    z: &[f64],
    q: &[f64],
    gamma: f64,
    ema_mode: bool,
) -> (Vec<f64>, Vec<f64>) {
    let grad_z: Vec<f64> = z.iter().zip(q).map(|(a, b)| 2.0 * gamma * (a - b)).collect();
    let grad_q: Vec<f64> = if ema_mode {
        vec![0.0; q.len()]
    } else {
        z.iter().zip(q).map(|(a, b)| 2.0 * (b - a)).collect()
    };
    (grad_z, grad_q)
}

/// Straight-through estimator, forward half: the value is exactly `q`.
pub fn straight_through(z: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if z.len() != q.len() {
        return Err(CoreError::ShapeMismatch {
            context: "straight_through inputs",
            expected: vec![z.len()],
            got: vec![q.len()],
        });
    }
    Ok(q.to_vec())
}

/// Straight-through estimator, backward half: the downstream gradient is
/// copied to `z` verbatim.
pub fn straight_through_backward(grad_out: &[f64]) -> Vec<f64> {
    grad_out.to_vec()
}

/// EMA codebook update from one batch of assignments.
///
/// Counts and sums decay by `decay` toward the batch statistics; entries
/// are the smoothed ratio with Laplace smoothing keeping effective counts
/// positive. Accumulators and entries are rounded to 32-bit representable
/// values so checkpoints are lossless snapshots.
pub fn ema_update(book: &mut Codebook, zs: &[&[f64]], indices: &[usize]) -> Result<()> {
    if zs.len() != indices.len() {
        return Err(CoreError::InvalidArgument {
            context: format!("ema_update: {} vectors vs {} indices", zs.len(), indices.len()),
        });
    }
    let (k, d) = (book.len(), book.dim());
    for &i in indices {
        if i >= k {
            return Err(CoreError::IndexOutOfBounds { context: "ema_update index", index: i, len: k });
        }
    }
    let mut counts = vec![0.0; k];
    let mut sums = vec![0.0; k * d];
    for (z, &i) in zs.iter().zip(indices) {
        if z.len() != d {
            return Err(CoreError::ShapeMismatch {
                context: "ema_update vector",
                expected: vec![d],
                got: vec![z.len()],
            });
        }
        counts[i] += 1.0;
        for (j, v) in z.iter().enumerate() {
            sums[i * d + j] += v;
        }
    }

    let lambda = book.decay;
    for i in 0..k {
        book.ema_counts[i] = round_f32(lambda * book.ema_counts[i] + (1.0 - lambda) * counts[i]);
        let row = book.ema_sums.row_mut(i);
        for j in 0..d {
            row[j] = round_f32(lambda * row[j] + (1.0 - lambda) * sums[i * d + j]);
        }
    }

    let total: f64 = book.ema_counts.iter().sum();
    let denom = total + k as f64 * book.smoothing;
    for i in 0..k {
        let smoothed = (book.ema_counts[i] + book.smoothing) / denom * total;
        let row = book.ema_sums.row(i).to_vec();
        let entry = book.entries.row_mut(i);
        for j in 0..d {
            entry[j] = round_f32(row[j] / smoothed);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book_with_entries(rows: Vec<Vec<f64>>) -> Codebook {
        let k = rows.len();
        let d = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let entries = Array::new(vec![k, d], flat).unwrap();
        Codebook {
            ema_counts: vec![1.0; k],
            ema_sums: entries.clone(),
            entries,
            decay: 0.99,
            smoothing: 1e-5,
            ema_mode: true,
        }
    }

    #[test]
    fn nearest_code_picks_the_closest_entry() {
        let book = book_with_entries(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let (q, idx) = nearest_code(&book, &[0.2, 0.0]).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(q, vec![0.0, 0.0]);
    }

    #[test]
    fn nearest_code_breaks_ties_toward_the_smaller_index() {
        let book = book_with_entries(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let (_, idx) = nearest_code(&book, &[0.5, 0.0]).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn nearest_code_checks_dimensions() {
        let book = book_with_entries(vec![vec![0.0, 0.0]]);
        assert!(nearest_code(&book, &[0.0]).is_err());
    }

    #[test]
    fn nearest_code_agrees_with_an_independent_scan() {
        let mut rng = RngStream::new(12);
        let book = Codebook::new(32, 6, &mut rng).unwrap();
        for _ in 0..1000 {
            let z: Vec<f64> = (0..6).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let (_, idx) = nearest_code(&book, &z).unwrap();
            // Independent reference: fold over distances, strict improvement
            // only, so ties keep the earlier index.
            let mut want = 0;
            let mut want_d = f64::INFINITY;
            for k in 0..book.len() {
                let d: f64 =
                    z.iter().zip(book.entry(k)).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < want_d {
                    want_d = d;
                    want = k;
                }
            }
            assert_eq!(idx, want);
        }
        // A query equal to an entry returns that entry at distance zero.
        let e3 = book.entry(3).to_vec();
        let (q, idx) = nearest_code(&book, &e3).unwrap();
        assert_eq!(idx, 3);
        assert_eq!(q, e3);
    }

    #[test]
    fn vq_loss_is_nonnegative_and_zero_only_at_equality() {
        let mut rng = RngStream::new(21);
        for _ in 0..200 {
            let z: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let q: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            for ema in [true, false] {
                let l = vq_loss(&z, &q, 0.25, ema).unwrap();
                assert!(l > 0.0);
                assert_eq!(vq_loss(&z, &z, 0.25, ema).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn vq_loss_matches_hand_arithmetic_in_both_modes() {
        let z = [0.9, 0.8];
        let q = [1.0, 1.0];
        let ema = vq_loss(&z, &q, 0.25, true).unwrap();
        assert!((ema - 0.0125).abs() < 1e-12);
        let full = vq_loss(&z, &q, 0.25, false).unwrap();
        assert!((full - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn vq_loss_gradients_route_through_the_stop_gradients() {
        let z = [0.9, 0.8];
        let q = [1.0, 1.0];
        let (gz, gq) = vq_loss_backward(&z, &q, 0.25, true);
        assert!((gz[0] - 2.0 * 0.25 * -0.1).abs() < 1e-12);
        assert_eq!(gq, vec![0.0, 0.0]);
        let (gz2, gq2) = vq_loss_backward(&z, &q, 0.25, false);
        assert_eq!(gz, gz2, "commitment gradient is mode independent");
        assert!((gq2[0] - 2.0 * 0.1).abs() < 1e-12);
        assert!((gq2[1] - 2.0 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn straight_through_forwards_q_and_copies_gradient_to_z() {
        let z = [0.3, -0.2];
        let q = [0.5, 0.0];
        let out = straight_through(&z, &q).unwrap();
        assert_eq!(out, vec![0.5, 0.0]);
        // Downstream loss 0.5 * |out|^2 has gradient `out` at the output;
        // the estimator hands exactly that to z.
        let grad_out: Vec<f64> = out.iter().copied().collect();
        let grad_z = straight_through_backward(&grad_out);
        assert_eq!(grad_z, out);
    }

    #[test]
    fn ema_update_moves_an_entry_toward_its_assigned_vector() {
        let mut book = book_with_entries(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let v = [0.0, 0.0];
        ema_update(&mut book, &[&v], &[0]).unwrap();
        // Counts: 0.99 + 0.01 = 1; sums: 0.99 * e_0 + 0.01 * v; the entry
        // moves about one percent toward v.
        assert!((book.ema_counts[0] - 1.0).abs() < 1e-9);
        let e0 = book.entry(0)[0];
        assert!((e0 - 0.99).abs() < 1e-3, "entry moved to {e0}");
        assert!(e0 < 1.0);
    }

    #[test]
    fn unassigned_entries_keep_their_ratio() {
        let mut book = book_with_entries(vec![vec![0.8, -0.4], vec![0.3, 0.9]]);
        let before = book.entry(1).to_vec();
        let v = [0.7, -0.3];
        for _ in 0..50 {
            ema_update(&mut book, &[&v], &[0]).unwrap();
        }
        let after = book.entry(1);
        for (b, a) in before.iter().zip(after) {
            assert!((b - a).abs() < 1e-4, "unassigned entry drifted: {b} -> {a}");
        }
    }

    #[test]
    fn stationary_assignments_converge_to_the_cluster_mean() {
        let mut rng = RngStream::new(4);
        let mut book = Codebook::new(2, 3, &mut rng).unwrap();
        let a = [1.0, 2.0, 3.0];
        let b = [0.5, 1.5, 2.5];
        let c = [-1.0, 0.0, 1.0];
        for _ in 0..1000 {
            ema_update(&mut book, &[&a, &b, &c], &[0, 0, 1]).unwrap();
        }
        let mean0 = [0.75, 1.75, 2.75];
        for (e, m) in book.entry(0).iter().zip(&mean0) {
            assert!((e - m).abs() < 1e-3, "entry {e} vs mean {m}");
        }
        for (e, m) in book.entry(1).iter().zip(&c) {
            assert!((e - m).abs() < 1e-3);
        }
    }

    #[test]
    fn ema_pull_is_monotonic_toward_a_stationary_vector() {
        let mut book = book_with_entries(vec![vec![2.0]]);
        let v = [0.0];
        let mut prev = book.entry(0)[0];
        for _ in 0..100 {
            ema_update(&mut book, &[&v], &[0]).unwrap();
            let cur = book.entry(0)[0];
            assert!(cur <= prev + 1e-12, "pull reversed: {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn effective_counts_stay_positive_under_smoothing() {
        let mut book = book_with_entries(vec![vec![1.0], vec![2.0]]);
        let v = [0.5];
        for _ in 0..5000 {
            ema_update(&mut book, &[&v], &[0]).unwrap();
        }
        // Entry 1 has decayed essentially to zero count, yet its entry must
        // remain finite thanks to the Laplace smoothing.
        assert!(book.entry(1)[0].is_finite());
        assert!(book.ema_counts.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn ema_update_validates_inputs() {
        let mut book = book_with_entries(vec![vec![0.0, 0.0]]);
        let v2 = [0.0, 0.0];
        assert!(ema_update(&mut book, &[&v2], &[3]).is_err());
        let v1 = [0.0];
        assert!(ema_update(&mut book, &[&v1], &[0]).is_err());
        assert!(ema_update(&mut book, &[], &[0]).is_err());
    }

    #[test]
    fn codebook_init_scales_with_dimension() {
        let mut rng = RngStream::new(99);
        let book = Codebook::new(256, 16, &mut rng).unwrap();
        let var: f64 =
            book.entries.data().iter().map(|v| v * v).sum::<f64>() / book.entries.len() as f64;
        assert!((var - 1.0 / 16.0).abs() < 0.02, "sample variance {var}");
    }
}
