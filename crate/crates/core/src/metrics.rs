//! PSNR and SSIM, and the tabulated evaluation report.
//!
//! Images are compared in the gamma domain by default (clamped to `[0, 1]`
//! then raised to `1/2.2`) with a peak value of 1.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::objective::{gamma_value, DEFAULT_GAMMA};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Intensity domain the metrics are computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    #[default]
    Gamma,
    Linear,
}

impl Domain {
    pub fn apply(self, image: &Tensor<f64>) -> Tensor<f64> {
        match self {
            Domain::Gamma => image.map(|v| gamma_value(v, DEFAULT_GAMMA)),
            Domain::Linear => image.clone(),
        }
    }
}

fn check_pair(op: &'static str, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<(usize, usize)> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::shape(
            op,
            "image shape",
            format!("expected two equal [H,W] images, got {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(a.hw())
}

/// `10 log10(peak^2 / mse)`; infinite when the images are identical.
pub fn psnr(pred: &Tensor<f64>, gt: &Tensor<f64>, peak: f64) -> Result<f64> {
    check_pair("psnr", pred, gt)?;
    let n = pred.len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(peak * peak / mse))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of `img` (`h x w`) with `taps` in both directions.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11x11 Gaussian windows
/// (sigma 1.5, `K1 = 0.01`, `K2 = 0.03`) for images with range `peak`.
pub fn ssim(pred: &Tensor<f64>, gt: &Tensor<f64>, peak: f64) -> Result<f64> {
    let (h, w) = check_pair("ssim", pred, gt)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            "spatial extent",
            format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (a, b) = (pred.data(), gt.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_x = filter_valid(a, h, w, &taps);
    let mu_y = filter_valid(b, h, w, &taps);
    let xx = filter_valid(&prod(&|x, _| x * x), h, w, &taps);
    let yy = filter_valid(&prod(&|_, y| y * y), h, w, &taps);
    let xy = filter_valid(&prod(&|x, y| x * y), h, w, &taps);
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of `pred` against `gt` in `domain`, peak 1.
pub fn score(pred: &Tensor<f64>, gt: &Tensor<f64>, domain: Domain) -> Result<Scores> {
    let (p, g) = (domain.apply(pred), domain.apply(gt));
    Ok(Scores {
        psnr: psnr(&p, &g, 1.0)?,
        ssim: ssim(&p, &g, 1.0)?,
    })
}

/// Arithmetic mean of per-image scores.
pub fn mean_scores(scores: &[Scores]) -> Option<Scores> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(Scores {
        psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    /// One entry per column of [`EvalReport::gains`].
    pub scores: Vec<Scores>,
}

/// Method-by-gain table of mean PSNR/SSIM.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub gains: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new(gains: Vec<String>) -> Self {
        EvalReport { gains, rows: Vec::new() }
    }

    pub fn push(&mut self, label: &str, scores: Vec<Scores>) -> Result<()> {
        if scores.len() != self.gains.len() {
            return Err(Error::shape(
                "eval_report",
                "columns",
                format!("{} scores for {} gains", scores.len(), self.gains.len()),
            ));
        }
        self.rows.push(ReportRow {
            label: label.into(),
            scores,
        });
        Ok(())
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text table, `PSNR/SSIM` per cell.
    pub fn render_table(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.label.len()).chain([6]).max().unwrap_or(6);
        let cell_w = 15;
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "Method");
        for g in &self.gains {
            let _ = write!(out, " | {g:^cell_w$}");
        }
        out.push('\n');
        let _ = write!(out, "{}", "-".repeat(label_w));
        for _ in &self.gains {
            let _ = write!(out, "-+-{}", "-".repeat(cell_w));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<label_w$}", r.label);
            for s in &r.scores {
                let cell = format!("{:.2}/{:.4}", s.psnr, s.ssim);
                let _ = write!(out, " | {cell:^cell_w$}");
            }
            out.push('\n');
        }
        out
    }

    /// `method,gain,psnr,ssim` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,gain,psnr,ssim\n");
        for r in &self.rows {
            for (g, s) in self.gains.iter().zip(&r.scores) {
                let _ = writeln!(out, "{},{},{:.6},{:.6}", r.label, g, s.psnr, s.ssim);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_constant_offset() {
        let a = Tensor::full(&[4, 4], 0.5);
        let b = Tensor::full(&[4, 4], 0.6);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = Tensor::from_fn(&[16, 13], |i| ((i * 7919) % 101) as f64 / 100.0);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Tensor::zeros(&[10, 20]), &Tensor::zeros(&[10, 20]), 1.0).is_err());
    }

    #[test]
    fn window_is_normalised_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(w[i], w[10 - i]);
        }
    }

    #[test]
    fn report_rendering() {
        let mut r = EvalReport::new(vec!["Gain 1".into(), "Gain 2".into()]);
        let s = Scores { psnr: 30.0, ssim: 0.9 };
        r.push("Reference frame", vec![s, s]).unwrap();
        assert!(r.push("bad", vec![s]).is_err());
        let table = r.render_table();
        assert!(table.contains("Reference frame"));
        assert!(table.contains("30.00/0.9000"));
        assert_eq!(r.to_csv().lines().count(), 3);
    }
}
