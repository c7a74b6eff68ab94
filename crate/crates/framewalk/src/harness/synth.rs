//! Synthetic dataset construction: procedural clean images plus seeded
//! degradation recipes, written as LQ/HQ pairs with a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::degrade::{apply_recipe, gaussian_blur, sample_recipe, CategoryLabel, DegradationRecipe};
use crate::error::{Error, Result};
use crate::harness::manifest::{Manifest, ManifestEntry};
use crate::image::io::write_image;
use crate::image::ImageBuffer;

/// Procedurally generate a pool of clean images: smooth sinusoid fields with
/// soft ellipses and light blurred texture, values kept inside [0.02, 0.98]
/// so degradations stay measurable. Image `i` draws from
/// `ChaCha8Rng::seed_from_u64(seed ^ i)`.
pub fn gen_clean_images(count: usize, size: usize, seed: u64) -> Vec<ImageBuffer> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            gen_clean_image(size, &mut rng)
        })
        .collect()
}

fn gen_clean_image(size: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let n = size;
    let mut data = vec![0.0f32; n * n * 3];

    // smooth multi-frequency base per channel
    for c in 0..3 {
        let offset = rng.gen_range(0.3..0.7) as f32;
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.5..3.0),
                    rng.gen_range(0.5..3.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.08..0.25),
                )
            })
            .collect();
        for y in 0..n {
            for x in 0..n {
                let mut v = offset as f64;
                for &(fx, fy, phase, amp) in &waves {
                    let arg = std::f64::consts::TAU * (fx * x as f64 / n as f64 + fy * y as f64 / n as f64) + phase;
                    v += amp * arg.sin();
                }
                data[(y * n + x) * 3 + c] = v as f32;
            }
        }
    }

    // a few soft ellipses for edges and object-like structure
    let shapes = rng.gen_range(2..5);
    for _ in 0..shapes {
        let cy = rng.gen_range(0.0..n as f64);
        let cx = rng.gen_range(0.0..n as f64);
        let ry = rng.gen_range(0.12..0.4) * n as f64;
        let rx = rng.gen_range(0.12..0.4) * n as f64;
        let color: [f32; 3] =
            [rng.gen_range(0.1..0.9) as f32, rng.gen_range(0.1..0.9) as f32, rng.gen_range(0.1..0.9) as f32];
        let alpha = rng.gen_range(0.4..0.9) as f32;
        for y in 0..n {
            for x in 0..n {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                let d = dy * dy + dx * dx;
                if d < 1.0 {
                    let w = alpha * (1.0 - d as f32);
                    for c in 0..3 {
                        let idx = (y * n + x) * 3 + c;
                        data[idx] += w * (color[c] - data[idx]);
                    }
                }
            }
        }
    }

    // light texture: clamped white noise softened by a small blur
    for v in data.iter_mut() {
        *v += rng.gen_range(-0.03..0.03);
        *v = v.clamp(0.02, 0.98);
    }
    let img = ImageBuffer::new(n, n, 3, data).expect("values clamped into range");
    let img = gaussian_blur(&img, 0.5).expect("valid sigma");
    let tightened: Vec<f32> = img.pixels().iter().map(|&v| v.clamp(0.02, 0.98)).collect();
    ImageBuffer::new(n, n, 3, tightened).expect("values clamped into range")
}

/// Synthesize `n_per_category` LQ/HQ pairs for each category from a pool of
/// clean sources. Writes `<Category>/hq_NNNN.png` and `lq_NNNN.png` under
/// `out_dir`, a `recipes.tsv` provenance file, and `manifest.tsv`; fully
/// reproducible from the seed (pair index k uses `seed ^ k`).
pub fn synth_dataset(
    sources: &[ImageBuffer],
    categories: &[CategoryLabel],
    n_per_category: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if sources.is_empty() && n_per_category > 0 {
        return Err(Error::InvalidArgument("synth_dataset needs at least one clean source image".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    if n_per_category == 0 {
        eprintln!("warning: synthesizing an empty dataset");
    }

    struct Job {
        category: CategoryLabel,
        index_in_category: usize,
        global_index: u64,
    }
    let mut jobs = Vec::new();
    let mut cats: Vec<CategoryLabel> = categories.to_vec();
    cats.sort_by_key(|c| c.index());
    for &category in &cats {
        for j in 0..n_per_category {
            jobs.push(Job { category, index_in_category: j, global_index: jobs.len() as u64 });
        }
    }

    let made: Result<Vec<(CategoryLabel, usize, ImageBuffer, ImageBuffer, DegradationRecipe)>> = jobs
        .par_iter()
        .map(|job| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ job.global_index);
            let src = &sources[rng.gen_range(0..sources.len())];
            let recipe = sample_recipe(job.category, &mut rng);
            let lq = apply_recipe(src, &recipe)?;
            Ok((job.category, job.index_in_category, src.clone(), lq, recipe))
        })
        .collect();
    let made = made.map_err(|e| e.in_stage("synth"))?;

    let mut entries = Vec::with_capacity(made.len());
    let mut recipes = String::from("# category\tindex\trecipe\n");
    for (category, j, hq, lq, recipe) in &made {
        let cat_dir = out_dir.join(category.name());
        fs::create_dir_all(&cat_dir).map_err(|e| Error::io(cat_dir.display().to_string(), e))?;
        let hq_rel = PathBuf::from(category.name()).join(format!("hq_{j:04}.png"));
        let lq_rel = PathBuf::from(category.name()).join(format!("lq_{j:04}.png"));
        write_image(hq, out_dir.join(&hq_rel))?;
        write_image(lq, out_dir.join(&lq_rel))?;
        recipes.push_str(&format!("{}\t{}\t{}\n", category.name(), j, recipe.serialize()));
        entries.push(ManifestEntry { category: *category, lq_path: lq_rel, hq_path: hq_rel });
    }
    fs::write(out_dir.join("recipes.tsv"), recipes)
        .map_err(|e| Error::io(out_dir.join("recipes.tsv").display().to_string(), e))?;

    let manifest = Manifest { entries, base_dir: out_dir.to_path_buf() };
    super::manifest::write_manifest(&manifest, out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
