//! Accuracy metrics: CLIP score on embeddings, SSIM and PSNR on frames.

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};

/// PSNR reported for identical frames.
pub const PSNR_MAX: f64 = 100.0;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// A frame with interleaved channels, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FrameImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain("frame dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Domain(format!("frames have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: width * height * channels,
                got: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(FrameImage { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<FrameImage> {
        if width == 0 || height == 0 {
            return Err(Error::Domain("frame dimensions must be positive".into()));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                for c in 0..self.channels {
                    let top = self.pixel(x0, y0, c) * (1.0 - wx) + self.pixel(x1, y0, c) * wx;
                    let bottom = self.pixel(x0, y1, c) * (1.0 - wx) + self.pixel(x1, y1, c) * wx;
                    data.push((top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0));
                }
            }
        }
        FrameImage::new(width, height, self.channels, data)
    }
}

fn check_same_shape(a: &FrameImage, b: &FrameImage) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::DimensionMismatch {
            expected: a.data.len(),
            got: b.data.len(),
        });
    }
    Ok(())
}

/// Mean SSIM over all 8×8 windows at stride 1 and over channels. Frames
/// narrower or shorter than 8 pixels use one window spanning that axis.
pub fn ssim(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    check_same_shape(a, b)?;
    let ww = SSIM_WINDOW.min(a.width);
    let wh = SSIM_WINDOW.min(a.height);
    let count = (ww * wh) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..a.channels {
        for y0 in 0..=(a.height - wh) {
            for x0 in 0..=(a.width - ww) {
                let (mut sa, mut sb) = (0.0, 0.0);
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        sa += a.pixel(x, y, c);
                        sb += b.pixel(x, y, c);
                    }
                }
                let (ma, mb) = (sa / count, sb / count);
                let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        let da = a.pixel(x, y, c) - ma;
                        let db = b.pixel(x, y, c) - mb;
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                let (vaa, vbb, vab) = (vaa / count, vbb / count, vab / count);
                let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * vab + SSIM_C2);
                let den = (ma * ma + mb * mb + SSIM_C1) * (vaa + vbb + SSIM_C2);
                total += num / den;
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// `10·log10(1/MSE)` in dB, capped at [`PSNR_MAX`].
pub fn psnr(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    check_same_shape(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_MAX);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_MAX))
}

/// Mean cosine similarity between a reference embedding and each generated
/// embedding.
pub fn clip_score(gt: &EmbeddingVector, generated: &[EmbeddingVector]) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for g in generated {
        sum += cosine_similarity(gt, g)?;
    }
    Ok(sum / generated.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMetric {
    Ssim,
    Psnr,
}

/// Indices `⌊k·long/short⌋` for `k < short`.
pub fn subsample_indices(long: usize, short: usize) -> Vec<usize> {
    (0..short).map(|k| k * long / short).collect()
}

/// Aligns the sequences by uniformly subsampling the longer one, then
/// averages the per-frame metric.
pub fn video_metric(gt: &[FrameImage], generated: &[FrameImage], metric: FrameMetric) -> Result<f64> {
    if gt.is_empty() || generated.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let short = gt.len().min(generated.len());
    let pick = |frames: &[FrameImage]| -> Vec<usize> { subsample_indices(frames.len(), short) };
    let (gi, vi) = (pick(gt), pick(generated));
    let mut total = 0.0;
    for (&i, &j) in gi.iter().zip(&vi) {
        total += match metric {
            FrameMetric::Ssim => ssim(&gt[i], &generated[j])?,
            FrameMetric::Psnr => psnr(&gt[i], &generated[j])?,
        };
    }
    Ok(total / short as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn noise(w: usize, h: usize, seed: u64) -> FrameImage {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        FrameImage::new(w, h, 1, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn gradient(w: usize, h: usize) -> FrameImage {
        let data = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x + y) as f64 / (w + h) as f64))
            .collect();
        FrameImage::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise(20, 16, 1);
        let b = noise(20, 16, 2);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn ssim_constant_frames_closed_form() {
        let a = FrameImage::constant(16, 16, 1, 0.0).unwrap();
        let b = FrameImage::constant(16, 16, 1, 1.0).unwrap();
        // (2·0·1 + C1)(0 + C2) / ((0 + 1 + C1)(0 + C2)) = C1 / (1 + C1)
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn ssim_orders_noise_levels() {
        let a = gradient(24, 24);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let noisy: Vec<f64> = a.data().iter().map(|v| (v + 0.02 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect();
        let noisy = FrameImage::new(24, 24, 1, noisy).unwrap();
        let s = ssim(&a, &noisy).unwrap();
        assert!(s < 1.0 && s > ssim(&a, &noise(24, 24, 9)).unwrap());
    }

    #[test]
    fn psnr_examples() {
        let a = FrameImage::constant(4, 4, 3, 0.0).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_MAX);
        let b = FrameImage::constant(4, 4, 3, 0.1).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = FrameImage::constant(4, 4, 3, 0.5).unwrap();
        assert!((psnr(&a, &c).unwrap() - 6.020599913279624).abs() < 1e-12);
        assert!(psnr(&a, &c).unwrap() < psnr(&a, &b).unwrap());
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = FrameImage::constant(4, 4, 1, 0.0).unwrap();
        let b = FrameImage::constant(4, 5, 1, 0.0).unwrap();
        assert!(matches!(ssim(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(psnr(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn frame_validation() {
        assert!(FrameImage::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(FrameImage::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(FrameImage::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn clip_score_examples() {
        let gt = EmbeddingVector::video(vec![1.0, 0.0]).unwrap();
        let same = vec![gt.clone(), gt.clone()];
        assert_eq!(clip_score(&gt, &same).unwrap(), 1.0);
        let ortho = vec![EmbeddingVector::video(vec![0.0, 1.0]).unwrap(), EmbeddingVector::video(vec![0.0, -2.0]).unwrap()];
        assert_eq!(clip_score(&gt, &ortho).unwrap(), 0.0);
        let mixed = vec![gt.clone(), EmbeddingVector::video(vec![0.0, 1.0]).unwrap()];
        assert_eq!(clip_score(&gt, &mixed).unwrap(), 0.5);
        assert!(clip_score(&gt, &[]).is_err());
    }

    #[test]
    fn subsampling_indices() {
        assert_eq!(subsample_indices(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(subsample_indices(7, 7), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn video_metric_examples() {
        let frames: Vec<FrameImage> = (0..10).map(|i| noise(12, 12, i)).collect();
        assert_eq!(video_metric(&frames, &frames, FrameMetric::Ssim).unwrap(), 1.0);

        let zero = FrameImage::constant(8, 8, 1, 0.0).unwrap();
        // MSE 1e-2 → 20 dB, MSE 1e-4 → 40 dB
        let gen = vec![
            FrameImage::constant(8, 8, 1, 0.1).unwrap(),
            FrameImage::constant(8, 8, 1, 0.01).unwrap(),
        ];
        let gt = vec![zero.clone(), zero];
        assert!((video_metric(&gt, &gen, FrameMetric::Psnr).unwrap() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn resize_preserves_constants_and_corners() {
        let a = FrameImage::constant(10, 6, 3, 0.25).unwrap();
        let r = a.resize_bilinear(5, 3).unwrap();
        assert_eq!((r.width(), r.height()), (5, 3));
        assert!(r.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let g = gradient(8, 8).resize_bilinear(16, 16).unwrap();
        assert_eq!(g.pixel(0, 0, 0), 0.0);
    }
}
