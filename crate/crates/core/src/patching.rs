//! Patch index arithmetic: carving univariate windows into subseries
//! patches, folding predicted patches back into series, and per-window
//! standardization.

use crate::data::SeriesFrame;
use crate::error::{Error, Result};

/// Mean and standard deviation of one look-back window. The deviation is
/// clamped to 1 when the window is (numerically) constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// One training example: a look-back window, an optional target horizon,
/// and where it came from.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub lookback: Vec<f64>,
    pub target: Vec<f64>,
    pub variate_id: usize,
    pub start_index: usize,
    pub norm_stats: Option<NormStats>,
}

/// A patch matrix carved from one univariate window: `n_patches` rows of
/// `patch_len` contiguous values, consecutive rows `stride` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<f64>,
    pub n_patches: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub origin_len: usize,
    pub padded_len: usize,
}

impl PatchGrid {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.patches[k * self.patch_len..(k + 1) * self.patch_len]
    }
}

/// Length after right-padding so that `(len - patch_len)` divides evenly.
pub fn padded_len(len: usize, patch_len: usize, stride: usize) -> usize {
    let rem = (len - patch_len) % stride;
    if rem == 0 {
        len
    } else {
        len + stride - rem
    }
}

/// Number of patches produced for a window of `len` values:
/// `(padded - patch_len) / stride + 1`.
pub fn patch_count(len: usize, patch_len: usize, stride: usize) -> usize {
    (padded_len(len, patch_len, stride) - patch_len) / stride + 1
}

/// Split one multivariate frame into its univariate series, preserving
/// variate order (channel independence).
pub fn flatten_channels(frame: &SeriesFrame) -> Vec<Vec<f64>> {
    (0..frame.n_variates).map(|m| frame.variate(m)).collect()
}

/// Carve `series` into overlapping patches. When `(len - patch_len)` is not
/// divisible by `stride` the series is right-padded by repeating its last
/// value; the grid records both lengths.
pub fn patchify(series: &[f64], patch_len: usize, stride: usize) -> Result<PatchGrid> {
    if patch_len == 0 {
        return Err(Error::shape("patch length must be >= 1".to_string()));
    }
    if stride == 0 || stride > patch_len {
        return Err(Error::shape(format!(
            "stride {stride} must satisfy 1 <= stride <= patch_len {patch_len}"
        )));
    }
    if series.len() < patch_len {
        return Err(Error::shape(format!(
            "series of length {} is shorter than patch length {patch_len}",
            series.len()
        )));
    }
    let origin_len = series.len();
    let padded = padded_len(origin_len, patch_len, stride);
    let n_patches = (padded - patch_len) / stride + 1;
    let last = *series.last().expect("nonempty");
    let mut patches = Vec::with_capacity(n_patches * patch_len);
    for k in 0..n_patches {
        for r in 0..patch_len {
            let pos = k * stride + r;
            patches.push(if pos < origin_len { series[pos] } else { last });
        }
    }
    Ok(PatchGrid {
        patches,
        n_patches,
        patch_len,
        stride,
        origin_len,
        padded_len: padded,
    })
}

/// Inverse of [`patchify`]: positions covered by several patches are
/// averaged, trailing padded positions beyond `out_len` are dropped.
pub fn unpatchify(grid: &PatchGrid, out_len: usize) -> Result<Vec<f64>> {
    let covered = (grid.n_patches - 1) * grid.stride + grid.patch_len;
    if covered < out_len {
        return Err(Error::shape(format!(
            "grid covers {covered} positions but {out_len} were requested"
        )));
    }
    let mut sums = vec![0.0; out_len];
    let mut counts = vec![0usize; out_len];
    for k in 0..grid.n_patches {
        for r in 0..grid.patch_len {
            let pos = k * grid.stride + r;
            if pos < out_len {
                sums[pos] += grid.patches[k * grid.patch_len + r];
                counts[pos] += 1;
            }
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect())
}

const STD_CLAMP: f64 = 1e-8;

pub fn compute_stats(window: &[f64]) -> NormStats {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    NormStats {
        mean,
        std: if std < STD_CLAMP { 1.0 } else { std },
    }
}

/// Standardize a window by its own mean and (clamped) deviation.
pub fn instance_normalize(window: &[f64]) -> (Vec<f64>, NormStats) {
    let stats = compute_stats(window);
    let normalized = window.iter().map(|&x| (x - stats.mean) / stats.std).collect();
    (normalized, stats)
}

pub fn denormalize(values: &[f64], stats: NormStats) -> Vec<f64> {
    values.iter().map(|&x| x * stats.std + stats.mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn patch_count_matches_formulas() {
        // L=336, P=16, S=8 and the stage-2 horizon case L=720.
        assert_eq!(patch_count(336, 16, 8), 41);
        assert_eq!(patch_count(720, 16, 8), 89);
    }

    #[test]
    fn single_patch_when_len_equals_patch() {
        let grid = patchify(&[1.0, 2.0, 3.0], 3, 1).unwrap();
        assert_eq!(grid.n_patches, 1);
        assert_eq!(grid.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rows_cover_expected_positions() {
        let series: Vec<f64> = (0..10).map(|x| x as f64).collect();
        let grid = patchify(&series, 4, 2).unwrap();
        assert_eq!(grid.n_patches, 4);
        for k in 0..4 {
            let expect: Vec<f64> = (0..4).map(|r| (k * 2 + r) as f64).collect();
            assert_eq!(grid.row(k), expect.as_slice());
        }
    }

    #[test]
    fn padding_repeats_last_value() {
        // len 9, P=4, S=2: (9-4) % 2 = 1, padded to 10, 4 patches.
        let series: Vec<f64> = (0..9).map(|x| x as f64).collect();
        let grid = patchify(&series, 4, 2).unwrap();
        assert_eq!(grid.padded_len, 10);
        assert_eq!(grid.n_patches, 4);
        assert_eq!(grid.row(3), &[6.0, 7.0, 8.0, 8.0]);
    }

    #[test]
    fn short_series_rejected() {
        assert!(patchify(&[1.0, 2.0], 3, 1).is_err());
    }

    #[test]
    fn unpatchify_is_concat_when_stride_equals_patch() {
        let series: Vec<f64> = (0..12).map(|x| x as f64 * 0.5).collect();
        let grid = patchify(&series, 4, 4).unwrap();
        assert_eq!(unpatchify(&grid, 12).unwrap(), series);
    }

    #[test]
    fn unpatchify_hand_average() {
        let grid = PatchGrid {
            patches: vec![1.0, 1.0, 3.0, 3.0],
            n_patches: 2,
            patch_len: 2,
            stride: 1,
            origin_len: 3,
            padded_len: 3,
        };
        assert_eq!(unpatchify(&grid, 3).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn unpatchify_coverage_shortfall_rejected() {
        let grid = patchify(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert!(unpatchify(&grid, 5).is_err());
    }

    #[test]
    fn roundtrip_identity_random_configs() {
        let mut rng = Rng::new(31);
        for _ in 0..200 {
            let len = 8 + rng.next_below(120);
            let p = 1 + rng.next_below(len.min(24));
            let s = 1 + rng.next_below(p);
            let series: Vec<f64> = (0..len).map(|_| rng.next_normal()).collect();
            let grid = patchify(&series, p, s).unwrap();
            let back = unpatchify(&grid, len).unwrap();
            for (i, (a, b)) in series.iter().zip(&back).enumerate() {
                assert!(
                    (a - b).abs() < 1e-12,
                    "len={len} p={p} s={s} mismatch at {i}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn normalize_constant_series_clamps() {
        let (norm, stats) = instance_normalize(&[4.0, 4.0, 4.0]);
        assert_eq!(stats.std, 1.0);
        assert_eq!(norm, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_denormalize_roundtrip() {
        let window = vec![1.0, 4.0, -2.0, 7.5, 0.25];
        let (norm, stats) = instance_normalize(&window);
        let back = denormalize(&norm, stats);
        for (a, b) in window.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_window_has_unit_moments() {
        let mut rng = Rng::new(4);
        let window: Vec<f64> = (0..64).map(|_| rng.next_normal() * 3.0 + 5.0).collect();
        let (norm, _) = instance_normalize(&window);
        let mean = norm.iter().sum::<f64>() / norm.len() as f64;
        let var = norm.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / norm.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-10);
    }
}
