//! Exact PSNR/SSIM on the 8-bit grid and per-category report emission.
//!
//! ```bash
//! cargo run --release --example metrics_report
//! ```

use framewalk::harness::report::{report_to_csv, report_to_markdown};
use framewalk::image::ImageBuffer;
use framewalk::metrics::{psnr, report_from_categories, ssim, CategoryScore, SsimParams};

fn main() -> framewalk::Result<()> {
    // hand-checkable cases
    let a = ImageBuffer::filled(16, 16, 3, 100.0 / 255.0)?;
    let b = ImageBuffer::filled(16, 16, 3, 101.0 / 255.0)?;
    println!("identical:       PSNR = {:.1} dB (cap)", psnr(&a, &a)?);
    println!("one 8-bit level: PSNR = {:.4} dB", psnr(&a, &b)?);
    let params = SsimParams::default();
    println!("identical:       SSIM = {}", ssim(&a, &a, &params)?);
    let c = ImageBuffer::filled(16, 16, 3, 150.0 / 255.0)?;
    println!("constant 100 vs 150: SSIM = {:.5}", ssim(&a, &c, &params)?);

    // a small synthetic report in the canonical 20-category layout
    let categories: Vec<CategoryScore> = framewalk::degrade::CategoryLabel::all()
        .map(|category| CategoryScore {
            category,
            count: 3,
            psnr_mean: 18.0 + category.index() as f64 * 0.4,
            ssim_mean: 0.55 + category.index() as f64 * 0.01,
        })
        .collect();
    let report = report_from_categories(categories);
    println!("\n--- report.csv ---\n{}", report_to_csv(&report)?);
    println!("--- report.md ---\n{}", report_to_markdown(&report)?);
    Ok(())
}
