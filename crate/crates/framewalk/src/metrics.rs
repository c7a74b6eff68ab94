//! PSNR and SSIM on the 8-bit grid, the >2K evaluation resize policy, and
//! per-category aggregation.
//!
//! Both metrics quantize to 0..255 (round(v * 255)) before comparison and
//! compute in f64. PSNR is 10*log10(255^2 / MSE) with a 100 dB cap for zero
//! MSE. SSIM uses Gaussian-weighted local statistics (11x11 window, sigma
//! 1.5, K1 = 0.01, K2 = 0.03) over valid window positions, averaged over
//! positions and channels.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::degrade::CategoryLabel;
use crate::error::{Error, Result};
use crate::image::io::read_image;
use crate::image::{resize, ImageBuffer};

/// PSNR value reported for identical images (MSE = 0).
pub const PSNR_CAP: f64 = 100.0;

/// SSIM constants.
#[derive(Clone, Copy, Debug)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range (255 for 8-bit comparison).
    pub l: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window_size: 11, sigma: 1.5, k1: 0.01, k2: 0.03, l: 255.0 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.l) * (self.k1 * self.l)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.l) * (self.k2 * self.l)
    }

    /// Normalized 1-D Gaussian window (the 2-D window is its outer product,
    /// which therefore sums to 1).
    pub fn window(&self) -> Vec<f64> {
        let r = (self.window_size / 2) as isize;
        let mut k: Vec<f64> =
            (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    }
}

/// Quantize one channel of an image to the 0..255 f64 grid.
fn quantized_plane(img: &ImageBuffer, channel: usize) -> Vec<f64> {
    let (h, w) = img.dims();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push((img.get(y, x, channel).clamp(0.0, 1.0) * 255.0).round() as f64);
        }
    }
    out
}

fn check_dims(op: &'static str, gt: &ImageBuffer, pred: &ImageBuffer) -> Result<()> {
    if gt.dims() != pred.dims() || gt.channels() != pred.channels() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!(
                "{}x{}x{} vs {}x{}x{}",
                gt.height(),
                gt.width(),
                gt.channels(),
                pred.height(),
                pred.width(),
                pred.channels()
            ),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in decibels over all pixels and channels.
pub fn psnr(gt: &ImageBuffer, pred: &ImageBuffer) -> Result<f64> {
    check_dims("psnr", gt, pred)?;
    let mut se = 0.0f64;
    let mut n = 0usize;
    for c in 0..gt.channels() {
        let (a, b) = (quantized_plane(gt, c), quantized_plane(pred, c));
        for (x, y) in a.iter().zip(&b) {
            let d = x - y;
            se += d * d;
        }
        n += a.len();
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Mean local SSIM over valid window positions, averaged across channels.
pub fn ssim(gt: &ImageBuffer, pred: &ImageBuffer, params: &SsimParams) -> Result<f64> {
    check_dims("ssim", gt, pred)?;
    let (h, w) = gt.dims();
    if h < params.window_size || w < params.window_size {
        return Err(Error::Eval(format!(
            "image {}x{} smaller than SSIM window {}",
            h, w, params.window_size
        )));
    }
    let window = params.window();
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..gt.channels() {
        let x = quantized_plane(gt, c);
        let y = quantized_plane(pred, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

        let mu_x = filter_valid(&x, h, w, &window);
        let mu_y = filter_valid(&y, h, w, &window);
        let e_xx = filter_valid(&xx, h, w, &window);
        let e_yy = filter_valid(&yy, h, w, &window);
        let e_xy = filter_valid(&xy, h, w, &window);

        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
            total += s;
        }
        count += mu_x.len();
    }
    Ok(total / count as f64)
}

/// Separable Gaussian filtering over valid positions (window fully inside).
fn filter_valid(plane: &[f64], h: usize, w: usize, window: &[f64]) -> Vec<f64> {
    let k = window.len();
    let out_w = w - k + 1;
    let out_h = h - k + 1;
    // horizontal pass: h x out_w
    let mut tmp = vec![0.0f64; h * out_w];
    for y in 0..h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &wv) in window.iter().enumerate() {
                acc += wv * plane[y * w + x + i];
            }
            tmp[y * out_w + x] = acc;
        }
    }
    // vertical pass: out_h x out_w
    let mut out = vec![0.0f64; out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &wv) in window.iter().enumerate() {
                acc += wv * tmp[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

// ── resize policy ───────────────────────────────────────────────────────

/// Undo transform returned by [`apply_resize_policy`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RestoreTransform {
    original_h: usize,
    original_w: usize,
}

impl RestoreTransform {
    /// Upscale a model output back to the original dimensions (identity when
    /// the policy never downsized).
    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        resize(img, self.original_h, self.original_w)
    }

    pub fn original_dims(&self) -> (usize, usize) {
        (self.original_h, self.original_w)
    }
}

/// Inference-side resolution cap: if the longer side exceeds `limit`, scale
/// so it equals `limit` (aspect preserved, nearest-integer rounding, min 1).
/// Metrics are computed after restoring to the original dimensions.
pub fn apply_resize_policy(img: &ImageBuffer, limit: usize) -> Result<(ImageBuffer, RestoreTransform)> {
    let (h, w) = img.dims();
    let restore = RestoreTransform { original_h: h, original_w: w };
    let long = h.max(w);
    if long <= limit {
        return Ok((img.clone(), restore));
    }
    let s = limit as f64 / long as f64;
    let (th, tw) = if h >= w {
        (limit, ((w as f64 * s).round() as usize).max(1))
    } else {
        (((h as f64 * s).round() as usize).max(1), limit)
    };
    Ok((resize(img, th, tw)?, restore))
}

/// Default longer-side cap used at evaluation time.
pub const RESIZE_LIMIT: usize = 2048;

// ── per-category aggregation ────────────────────────────────────────────

/// One ground-truth/prediction pair to score.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub category: CategoryLabel,
    pub gt_path: PathBuf,
    pub pred_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryScore {
    pub category: CategoryLabel,
    pub count: usize,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
}

/// Per-category metric means plus the overall row. The overall value is the
/// unweighted mean of the category means (the table's single Average
/// column), not the per-image mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by canonical category order.
    pub categories: Vec<CategoryScore>,
    pub overall_psnr: f64,
    pub overall_ssim: f64,
    pub checkpoint_id: String,
    pub dataset_id: String,
    /// Informational only; never serialized into byte-compared artifacts.
    pub timestamp: String,
}

/// Score every item (in parallel, deterministically ordered) and aggregate
/// by category.
pub fn evaluate_items(items: &[EvalItem], params: &SsimParams) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Eval("no items to evaluate".into()));
    }
    let scores: Result<Vec<(CategoryLabel, f64, f64)>> = items
        .par_iter()
        .map(|item| {
            let gt = read_image(&item.gt_path)?;
            let pred = read_image(&item.pred_path)?;
            let p = psnr(&gt, &pred).map_err(|e| Error::Eval(format!("{}: {e}", item.pred_path.display())))?;
            let s = ssim(&gt, &pred, params).map_err(|e| Error::Eval(format!("{}: {e}", item.pred_path.display())))?;
            Ok((item.category, p, s))
        })
        .collect();
    let scores = scores?;

    let mut categories = Vec::new();
    for cat in CategoryLabel::all() {
        let of_cat: Vec<&(CategoryLabel, f64, f64)> =
            scores.iter().filter(|(c, _, _)| *c == cat).collect();
        if of_cat.is_empty() {
            continue;
        }
        let n = of_cat.len() as f64;
        categories.push(CategoryScore {
            category: cat,
            count: of_cat.len(),
            psnr_mean: of_cat.iter().map(|(_, p, _)| p).sum::<f64>() / n,
            ssim_mean: of_cat.iter().map(|(_, _, s)| s).sum::<f64>() / n,
        });
    }
    Ok(report_from_categories(categories))
}

/// Assemble a report from per-category scores, computing the overall row.
pub fn report_from_categories(categories: Vec<CategoryScore>) -> EvalReport {
    let n = categories.len() as f64;
    let overall_psnr = categories.iter().map(|c| c.psnr_mean).sum::<f64>() / n;
    let overall_ssim = categories.iter().map(|c| c.ssim_mean).sum::<f64>() / n;
    EvalReport {
        categories,
        overall_psnr,
        overall_ssim,
        checkpoint_id: String::new(),
        dataset_id: String::new(),
        timestamp: String::new(),
    }
}

/// Direct-summation SSIM used as an independent oracle in tests: identical
/// definition, no separable filtering, one explicit window per position.
pub fn ssim_direct_reference(gt: &ImageBuffer, pred: &ImageBuffer, params: &SsimParams) -> Result<f64> {
    check_dims("ssim_direct", gt, pred)?;
    let (h, w) = gt.dims();
    if h < params.window_size || w < params.window_size {
        return Err(Error::Eval("image smaller than SSIM window".into()));
    }
    let win1d = params.window();
    let k = params.window_size;
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..gt.channels() {
        let x = quantized_plane(gt, c);
        let y = quantized_plane(pred, c);
        for wy in 0..=h - k {
            for wx in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let wgt = win1d[dy] * win1d[dx];
                        let xv = x[(wy + dy) * w + wx + dx];
                        let yv = y[(wy + dy) * w + wx + dx];
                        mx += wgt * xv;
                        my += wgt * yv;
                        exx += wgt * xv * xv;
                        eyy += wgt * yv * yv;
                        exy += wgt * xv * yv;
                    }
                }
                let var_x = exx - mx * mx;
                let var_y = eyy - my * my;
                let cov = exy - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageBuffer::new(h, w, 3, data).unwrap()
    }

    fn flip_h(img: &ImageBuffer) -> ImageBuffer {
        let (h, w) = img.dims();
        let c = img.channels();
        let mut out = ImageBuffer::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out.set(y, x, ch, img.get(y, w - 1 - x, ch));
                }
            }
        }
        out
    }

    #[test]
    fn psnr_identical_is_capped() {
        let img = random_image(16, 16, 1);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_full_range_difference_is_zero() {
        let black = ImageBuffer::zeros(8, 8, 3);
        let white = ImageBuffer::filled(8, 8, 3, 1.0).unwrap();
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
    }

    #[test]
    fn psnr_one_level_difference() {
        // uniform difference of exactly 1 on the 8-bit grid
        let a = ImageBuffer::filled(8, 8, 3, 100.0 / 255.0).unwrap();
        let b = ImageBuffer::filled(8, 8, 3, 101.0 / 255.0).unwrap();
        let got = psnr(&a, &b).unwrap();
        assert!((got - 10.0 * (255.0f64 * 255.0).log10()).abs() < 1e-12);
        assert!((got - 48.1308).abs() < 1e-4);
    }

    #[test]
    fn psnr_symmetric_and_noise_decreases_it() {
        let img = random_image(16, 16, 2);
        let noisy = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let data: Vec<f32> = img
                .pixels()
                .iter()
                .map(|&v| (v + rng.gen_range(-0.05..0.05f32)).clamp(0.0, 1.0))
                .collect();
            ImageBuffer::new(16, 16, 3, data).unwrap()
        };
        assert_eq!(psnr(&img, &noisy).unwrap(), psnr(&noisy, &img).unwrap());
        assert!(psnr(&img, &noisy).unwrap() < PSNR_CAP);
    }

    #[test]
    fn ssim_identical_is_one() {
        let img = random_image(16, 16, 4);
        let s = ssim(&img, &img, &SsimParams::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_constant_pair_closed_form() {
        // constants 100 vs 150 on the 8-bit scale: variances vanish, so
        // SSIM = (2*100*150 + C1) / (100^2 + 150^2 + C1)
        let a = ImageBuffer::filled(12, 12, 1, 100.0 / 255.0).unwrap();
        let b = ImageBuffer::filled(12, 12, 1, 150.0 / 255.0).unwrap();
        let params = SsimParams::default();
        let want = (2.0 * 100.0 * 150.0 + params.c1()) / (100.0f64 * 100.0 + 150.0 * 150.0 + params.c1());
        let got = ssim(&a, &b, &params).unwrap();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        assert!((got - 0.92309).abs() < 1e-5);
    }

    #[test]
    fn ssim_matches_direct_reference() {
        let params = SsimParams::default();
        for seed in 0..4 {
            let a = random_image(32, 32, 100 + seed);
            let b = random_image(32, 32, 200 + seed);
            let fast = ssim(&a, &b, &params).unwrap();
            let slow = ssim_direct_reference(&a, &b, &params).unwrap();
            assert!((fast - slow).abs() < 1e-6, "fast {fast} vs direct {slow}");
        }
    }

    #[test]
    fn ssim_symmetric_bounded_and_flip_invariant() {
        let params = SsimParams::default();
        let a = random_image(20, 24, 7);
        let b = random_image(20, 24, 8);
        let s_ab = ssim(&a, &b, &params).unwrap();
        let s_ba = ssim(&b, &a, &params).unwrap();
        assert!((s_ab - s_ba).abs() < 1e-12);
        assert!(s_ab.abs() <= 1.0);
        let s_flip = ssim(&flip_h(&a), &flip_h(&b), &params).unwrap();
        assert!((s_ab - s_flip).abs() < 1e-9);
        let p_flip = psnr(&flip_h(&a), &flip_h(&b)).unwrap();
        assert!((psnr(&a, &b).unwrap() - p_flip).abs() < 1e-9);
    }

    #[test]
    fn ssim_window_sums_to_one() {
        let params = SsimParams::default();
        let w1 = params.window();
        let total: f64 = w1.iter().flat_map(|a| w1.iter().map(move |b| a * b)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(params.c1() > 0.0 && params.c2() > 0.0);
    }

    #[test]
    fn ssim_rejects_images_smaller_than_window() {
        let img = random_image(8, 8, 9);
        assert!(ssim(&img, &img, &SsimParams::default()).is_err());
    }

    #[test]
    fn resize_policy_under_limit_is_unchanged() {
        let img = random_image(19, 10, 10); // stands in for 1920x1080
        let (out, restore) = apply_resize_policy(&img, 20).unwrap();
        assert_eq!(out, img);
        assert_eq!(restore.original_dims(), (19, 10));
    }

    #[test]
    fn resize_policy_caps_longer_side() {
        // 4096x2048 -> 2048x1024, desk-scaled as 40x20 with limit 20
        let img = random_image(40, 20, 11);
        let (out, restore) = apply_resize_policy(&img, 20).unwrap();
        assert_eq!(out.dims(), (20, 10));
        let back = restore.apply(&out).unwrap();
        assert_eq!(back.dims(), (40, 20));
    }

    #[test]
    fn resize_policy_round_trip_dims_always() {
        for (h, w, limit) in [(7, 31, 16), (64, 9, 20), (5, 5, 4), (3, 3, 8)] {
            let img = random_image(h, w, (h * 100 + w) as u64);
            let (out, restore) = apply_resize_policy(&img, limit).unwrap();
            assert!(out.dims().0.max(out.dims().1) <= limit.max(1));
            assert_eq!(restore.apply(&out).unwrap().dims(), (h, w));
        }
    }

    #[test]
    fn report_overall_is_mean_of_category_means() {
        let scores = vec![
            CategoryScore {
                category: CategoryLabel::parse("Blur").unwrap(),
                count: 2,
                psnr_mean: 20.0,
                ssim_mean: 0.5,
            },
            CategoryScore {
                category: CategoryLabel::parse("Noise").unwrap(),
                count: 8,
                psnr_mean: 30.0,
                ssim_mean: 0.9,
            },
        ];
        let report = report_from_categories(scores);
        assert_eq!(report.overall_psnr, 25.0);
        assert!((report.overall_ssim - 0.7).abs() < 1e-12);
    }

    #[test]
    fn evaluate_items_fixture_oracle() {
        // 4 images in 2 categories with hand-computable uniform offsets
        let dir = tempfile::tempdir().unwrap();
        let gt = ImageBuffer::filled(12, 12, 3, 100.0 / 255.0).unwrap();
        let ident = gt.clone();
        let off50 = ImageBuffer::filled(12, 12, 3, 150.0 / 255.0).unwrap();
        let mut items = Vec::new();
        for (i, (cat, pred)) in [
            ("Blur", &ident),
            ("Blur", &ident),
            ("Noise", &off50),
            ("Noise", &off50),
        ]
        .iter()
        .enumerate()
        {
            let gt_path = dir.path().join(format!("gt{i}.png"));
            let pred_path = dir.path().join(format!("pred{i}.png"));
            crate::image::io::write_image(&gt, &gt_path).unwrap();
            crate::image::io::write_image(pred, &pred_path).unwrap();
            items.push(EvalItem {
                category: CategoryLabel::parse(cat).unwrap(),
                gt_path,
                pred_path,
            });
        }
        let report = evaluate_items(&items, &SsimParams::default()).unwrap();
        assert_eq!(report.categories.len(), 2);
        let blur = &report.categories[0];
        assert_eq!(blur.count, 2);
        assert_eq!(blur.psnr_mean, PSNR_CAP);
        assert_eq!(blur.ssim_mean, 1.0);
        let noise = &report.categories[1];
        // uniform offset of 50 levels: MSE = 2500
        let want_psnr = 10.0 * (255.0f64 * 255.0 / 2500.0).log10();
        assert!((noise.psnr_mean - want_psnr).abs() < 1e-9);
        assert!((noise.psnr_mean - 14.1514).abs() < 1e-4);
        assert!((report.overall_psnr - (PSNR_CAP + want_psnr) / 2.0).abs() < 1e-9);
    }
}
