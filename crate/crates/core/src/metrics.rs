//! Frame-quality metrics: MSE, MAE, PSNR and SSIM.
//!
//! Frames are flat slices laid out as `(N, C, H, W)`; every function takes
//! the `(C, H, W)` frame shape explicitly.

use std::fmt;

use crate::error::{Error, Result};

/// PSNR reported when the MSE is effectively zero.
pub const PSNR_CAP_DB: f64 = 120.0;
const PSNR_MIN_MSE: f64 = 1e-12;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// How squared and absolute errors are reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// Mean over every pixel.
    PixelMean,
    /// Sum over the pixels of a frame, mean over frames.
    FrameSum,
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::PixelMean => "pixel-mean",
            Convention::FrameSum => "frame-sum",
        })
    }
}

fn check(pred: &[f64], target: &[f64], frame: usize, op: &'static str) -> Result<usize> {
    if pred.len() != target.len() {
        return Err(Error::shape(op, &[pred.len()], &[target.len()]));
    }
    if frame == 0 || pred.is_empty() || !pred.len().is_multiple_of(frame) {
        return Err(Error::invalid(
            op,
            format!("{} values do not split into frames of {frame}", pred.len()),
        ));
    }
    Ok(pred.len() / frame)
}

fn reduce(
    pred: &[f64],
    target: &[f64],
    frame: usize,
    conv: Convention,
    op: &'static str,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    let frames = check(pred, target, frame, op)?;
    let total: f64 = pred.iter().zip(target).map(|(p, t)| f(p - t)).sum();
    Ok(match conv {
        Convention::PixelMean => total / pred.len() as f64,
        Convention::FrameSum => total / frames as f64,
    })
}

/// Mean squared error; `frame` is the number of values per frame.
pub fn mse(pred: &[f64], target: &[f64], frame: usize, conv: Convention) -> Result<f64> {
    reduce(pred, target, frame, conv, "mse", |d| d * d)
}

pub fn mae(pred: &[f64], target: &[f64], frame: usize, conv: Convention) -> Result<f64> {
    reduce(pred, target, frame, conv, "mae", f64::abs)
}

/// PSNR for a given pixel-mean MSE.
pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse < PSNR_MIN_MSE {
        PSNR_CAP_DB
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

pub fn psnr(pred: &[f64], target: &[f64], max_val: f64) -> Result<f64> {
    let n = pred.len();
    Ok(psnr_from_mse(
        mse(pred, target, n.max(1), Convention::PixelMean)?,
        max_val,
    ))
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of two single-channel `h x w` planes with dynamic range 1.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape("ssim", &[a.len()], &[h * w]));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("frame {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter(a, h, w, &taps);
    let mu_b = filter(b, h, w, &taps);
    let aa = filter(&prod(a, a), h, w, &taps);
    let bb = filter(&prod(b, b), h, w, &taps);
    let ab = filter(&prod(a, b), h, w, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean SSIM over frames `(N, C, H, W)`; channels are scored separately
/// and averaged.
pub fn ssim(pred: &[f64], target: &[f64], shape: [usize; 3]) -> Result<f64> {
    let [c, h, w] = shape;
    let frames = check(pred, target, c * h * w, "ssim")?;
    let plane = h * w;
    let mut total = 0.0;
    for i in 0..frames * c {
        total += ssim_plane(
            &pred[i * plane..(i + 1) * plane],
            &target[i * plane..(i + 1) * plane],
            h,
            w,
        )?;
    }
    Ok(total / (frames * c) as f64)
}

/// Metrics for one prediction step, averaged over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub mse_pixel: f64,
    pub mse_frame: f64,
    pub mae_pixel: f64,
    pub mae_frame: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-step metrics over a prediction horizon plus their averages.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_frame: Vec<FrameMetrics>,
    pub average: FrameMetrics,
    pub samples: usize,
}

impl MetricReport {
    /// `pred` and `target` are `(B, T, C, H, W)`; row `t` of the report
    /// covers step `t` across the batch. PSNR is averaged per sample. SSIM
    /// is NaN for frames smaller than its window.
    pub fn compute(pred: &[f64], target: &[f64], batch: usize, steps: usize, shape: [usize; 3]) -> Result<Self> {
        let frame = shape.iter().product::<usize>();
        if pred.len() != batch * steps * frame || target.len() != pred.len() {
            return Err(Error::shape(
                "metrics",
                &[pred.len(), target.len()],
                &[batch * steps * frame],
            ));
        }
        let mut rows = Vec::with_capacity(steps);
        for t in 0..steps {
            let gather = |src: &[f64]| -> Vec<f64> {
                (0..batch)
                    .flat_map(|b| {
                        let at = (b * steps + t) * frame;
                        src[at..at + frame].iter().copied()
                    })
                    .collect()
            };
            let (p, q) = (gather(pred), gather(target));
            let mut psnr_sum = 0.0;
            for b in 0..batch {
                psnr_sum += psnr(&p[b * frame..(b + 1) * frame], &q[b * frame..(b + 1) * frame], 1.0)?;
            }
            rows.push(FrameMetrics {
                mse_pixel: mse(&p, &q, frame, Convention::PixelMean)?,
                mse_frame: mse(&p, &q, frame, Convention::FrameSum)?,
                mae_pixel: mae(&p, &q, frame, Convention::PixelMean)?,
                mae_frame: mae(&p, &q, frame, Convention::FrameSum)?,
                psnr: psnr_sum / batch as f64,
                ssim: if shape[1] < SSIM_WINDOW || shape[2] < SSIM_WINDOW {
                    f64::NAN
                } else {
                    ssim(&p, &q, shape)?
                },
            });
        }
        Ok(Self::from_rows(rows, batch))
    }

    /// Builds a report from accumulated rows, e.g. batch-weighted sums.
    pub fn from_rows(per_frame: Vec<FrameMetrics>, samples: usize) -> Self {
        let n = per_frame.len().max(1) as f64;
        let avg = |f: fn(&FrameMetrics) -> f64| per_frame.iter().map(f).sum::<f64>() / n;
        let average = FrameMetrics {
            mse_pixel: avg(|m| m.mse_pixel),
            mse_frame: avg(|m| m.mse_frame),
            mae_pixel: avg(|m| m.mae_pixel),
            mae_frame: avg(|m| m.mae_frame),
            psnr: avg(|m| m.psnr),
            ssim: avg(|m| m.ssim),
        };
        MetricReport {
            per_frame,
            average,
            samples,
        }
    }

    /// Merges reports over disjoint sample sets, weighting by sample count.
    pub fn merge(reports: &[MetricReport]) -> Option<Self> {
        let first = reports.first()?;
        let steps = first.per_frame.len();
        let total: usize = reports.iter().map(|r| r.samples).sum();
        let rows = (0..steps)
            .map(|t| {
                let w = |f: fn(&FrameMetrics) -> f64| {
                    reports
                        .iter()
                        .map(|r| f(&r.per_frame[t]) * r.samples as f64)
                        .sum::<f64>()
                        / total as f64
                };
                FrameMetrics {
                    mse_pixel: w(|m| m.mse_pixel),
                    mse_frame: w(|m| m.mse_frame),
                    mae_pixel: w(|m| m.mae_pixel),
                    mae_frame: w(|m| m.mae_frame),
                    psnr: w(|m| m.psnr),
                    ssim: w(|m| m.ssim),
                }
            })
            .collect();
        Some(Self::from_rows(rows, total))
    }

    /// CSV with one row per step and a final `mean` row. Column names carry
    /// the reduction convention.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,mse_pixel_mean,mse_frame_sum,mae_pixel_mean,mae_frame_sum,psnr_db,ssim\n");
        let row = |label: String, m: &FrameMetrics| {
            format!(
                "{label},{},{},{},{},{},{}\n",
                m.mse_pixel, m.mse_frame, m.mae_pixel, m.mae_frame, m.psnr, m.ssim
            )
        };
        for (t, m) in self.per_frame.iter().enumerate() {
            s += &row(t.to_string(), m);
        }
        s += &row("mean".into(), &self.average);
        s
    }

    pub fn summary(&self) -> String {
        let a = &self.average;
        format!(
            "{} samples, {} steps: MSE {:.6} (pixel-mean) / {:.3} (frame-sum), MAE {:.6} / {:.3}, PSNR {:.3} dB, SSIM {:.6}",
            self.samples,
            self.per_frame.len(),
            a.mse_pixel,
            a.mse_frame,
            a.mae_pixel,
            a.mae_frame,
            a.psnr,
            a.ssim
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_error_under_both_conventions() {
        let p = vec![0.3; 4096 * 2];
        let t = vec![0.2; 4096 * 2];
        let pix = mse(&p, &t, 4096, Convention::PixelMean).unwrap();
        let sum = mse(&p, &t, 4096, Convention::FrameSum).unwrap();
        assert!((pix - 0.01).abs() < 1e-12);
        assert!((sum - 40.96).abs() < 1e-9);
    }

    #[test]
    fn alternating_mae() {
        let t = vec![0.5; 100];
        let p: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.7 } else { 0.3 }).collect();
        assert!((mae(&p, &t, 100, Convention::PixelMean).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn psnr_values() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-9);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        assert_eq!(psnr(&[0.5; 16], &[0.5; 16], 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g[0] - g[10]).abs() < 1e-15);
    }

    #[test]
    fn ssim_constant_frames() {
        // Means 0 and 1, zero variance: (c1)(c2) / ((1 + c1)(c2)).
        let c1 = SSIM_K1 * SSIM_K1;
        let expect = c1 / (1.0 + c1);
        let v = ssim_plane(&[0.0; 256], &[1.0; 256], 16, 16).unwrap();
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        assert!(ssim_plane(&[0.0; 100], &[0.0; 100], 10, 10).is_err());
    }

    #[test]
    fn report_averages_rows() {
        let p: Vec<f64> = (0..2 * 3 * 256).map(|i| (i % 7) as f64 / 7.0).collect();
        let t: Vec<f64> = (0..2 * 3 * 256).map(|i| (i % 5) as f64 / 5.0).collect();
        let r = MetricReport::compute(&p, &t, 2, 3, [1, 16, 16]).unwrap();
        assert_eq!(r.per_frame.len(), 3);
        let m = r.per_frame.iter().map(|f| f.ssim).sum::<f64>() / 3.0;
        assert!((m - r.average.ssim).abs() < 1e-12);
        assert!(r.to_csv().lines().count() == 5);
    }
}
