//! Sample one recipe per category, apply it to a procedural clean image, and
//! write the gallery to `gallery_out/`. Prints each recipe's one-line
//! serialized form.
//!
//! ```bash
//! cargo run --release --example degradation_gallery
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framewalk::degrade::{apply_recipe, sample_recipe, CategoryLabel, DegradationRecipe};
use framewalk::harness::synth::gen_clean_images;
use framewalk::image::io::write_image;
use framewalk::metrics::psnr;

fn main() -> framewalk::Result<()> {
    let out = std::path::Path::new("gallery_out");
    std::fs::create_dir_all(out).expect("create output dir");

    let clean = &gen_clean_images(1, 64, 7)[0];
    write_image(clean, out.join("clean.png"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for category in CategoryLabel::all() {
        let recipe = sample_recipe(category, &mut rng);
        let degraded = apply_recipe(clean, &recipe)?;
        let name = category.name().replace('+', "");
        write_image(&degraded, out.join(format!("{name}.png")))?;

        let text = recipe.serialize();
        // recipes round-trip exactly through their text form
        assert_eq!(DegradationRecipe::parse(&text)?, recipe);
        println!("{:>8.2} dB  {:10}  {}", psnr(clean, &degraded)?, category.name(), text);
    }
    println!("\nwrote 21 images under {}", out.display());
    Ok(())
}
