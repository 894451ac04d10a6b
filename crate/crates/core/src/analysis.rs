//! Image statistics: patch coefficient of variation, correlation, histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

pub const DEFAULT_PATCH: usize = 8;
pub const CV_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchStats {
    pub image_id: usize,
    pub mean_cv: f64,
}

/// Mean over full `patch x patch` tiles and channels of `std / (mean + 1e-8)`.
///
/// `image` is `[H, W, C]` or `[H, W]`. Tiles start at the origin; partial
/// tiles along the right and bottom edges are dropped.
pub fn patch_cv(image: &Tensor, patch: usize) -> Result<f64> {
    let (h, w, c) = match image.shape() {
        [h, w] => (*h, *w, 1),
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(Error::invalid(
                "image",
                format!("expected [H, W, C] or [H, W], got {other:?}"),
            ))
        }
    };
    if patch == 0 {
        return Err(Error::invalid("patch", "must be at least 1"));
    }
    if h < patch || w < patch || c == 0 {
        return Err(Error::invalid(
            "image",
            format!("{h}x{w} image is smaller than one {patch}x{patch} patch"),
        ));
    }
    let data = image.data();
    let n = (patch * patch) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for py in 0..h / patch {
            for px in 0..w / patch {
                let values: Vec<f64> = (py * patch..(py + 1) * patch)
                    .flat_map(|y| (px * patch..(px + 1) * patch).map(move |x| (y * w + x) * c + ch))
                    .map(|i| data[i])
                    .collect();
                // shifted two-pass variance: exact zero on flat patches
                let shift = values[0];
                let mean_d = values.iter().map(|v| v - shift).sum::<f64>() / n;
                let var = values
                    .iter()
                    .map(|v| (v - shift - mean_d).powi(2))
                    .sum::<f64>()
                    / n;
                total += var.sqrt() / (shift + mean_d + CV_GUARD);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("ys", "length differs from xs"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("xs", "need at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::invalid("xs", "zero variance"));
    }
    if syy == 0.0 {
        return Err(Error::invalid("ys", "zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Values outside the range, or NaN.
    pub excluded: usize,
}

/// Uniform bins over `[lo, hi]`; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::invalid("values", "empty input"));
    }
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid("range", format!("invalid range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    let mut excluded = 0;
    for &v in values {
        if !(lo..=hi).contains(&v) {
            excluded += 1;
            continue;
        }
        let i = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        excluded,
    })
}

/// Range spanning all finite values, widened slightly when degenerate.
pub fn auto_range(values: &[f64]) -> Option<(f64, f64)> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if lo > hi {
        return None;
    }
    if lo == hi {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.05 };
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_cv() {
        let img = Tensor::filled(vec![16, 16, 3], 0.4);
        assert_eq!(patch_cv(&img, 8).unwrap(), 0.0);
    }

    #[test]
    fn half_and_half_patch() {
        let data: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let img = Tensor::new(vec![8, 8, 1], data).unwrap();
        assert!((patch_cv(&img, 8).unwrap() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn cv_is_scale_invariant_and_drops_partial_patches() {
        let data: Vec<f64> = (0..20 * 17 * 2).map(|i| 0.3 + 0.2 * ((i * 7 % 13) as f64 / 13.0)).collect();
        let img = Tensor::new(vec![20, 17, 2], data).unwrap();
        let a = patch_cv(&img, 8).unwrap();
        let b = patch_cv(&img.scale(2.5).unwrap(), 8).unwrap();
        assert!((a - b).abs() < 1e-7);
        assert!(patch_cv(&Tensor::zeros(vec![7, 9, 1]), 8).is_err());
        assert!(patch_cv(&Tensor::zeros(vec![64]), 8).is_err());
    }

    #[test]
    fn pearson_examples() {
        let xs = [0.0, 1.0, 2.0, 3.5];
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&[0.0, 1.0, 2.0], &[0.0, 1.0, 3.0]).unwrap();
        assert!((r - 0.982).abs() < 5e-4, "{r}");
        assert!(pearson(&[1.0, 1.0], &[0.0, 1.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.3], 1, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![1]);
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let h = histogram(&grid, 10, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![10; 10]);
        assert_eq!(h.edges.len(), 11);
        let h = histogram(&[-1.0, 0.5, 2.0, f64::NAN], 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 1);
        assert_eq!(h.excluded, 3);
        assert!(histogram(&[], 3, (0.0, 1.0)).is_err());
        assert!(histogram(&[1.0], 0, (0.0, 1.0)).is_err());
    }
}
