//! Lift one degraded/clean pair into a pseudo-temporal clip and write its
//! frames to `clip_out/` together with the clip metadata file.
//!
//! ```bash
//! cargo run --release --example pseudo_clips
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framewalk::clip::{alpha_schedule, build_pseudo_clip, write_clip};
use framewalk::degrade::{apply_recipe, sample_recipe, CategoryLabel};
use framewalk::harness::synth::gen_clean_images;
use framewalk::metrics::psnr;

fn main() -> framewalk::Result<()> {
    let hq = &gen_clean_images(1, 64, 3)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let recipe = sample_recipe(CategoryLabel::parse("L+B+N")?, &mut rng);
    let lq = apply_recipe(hq, &recipe)?;

    // the 9-frame default: T = 8 intervals
    let clip = build_pseudo_clip(&lq, hq, 8)?;
    println!("alphas: {:?}", alpha_schedule(8)?);
    println!("quality climbs monotonically along the trajectory:");
    for (t, frame) in clip.frames.iter().enumerate() {
        println!("  frame {t}: PSNR vs clean = {:6.2} dB", psnr(hq, frame)?);
    }

    let dir = std::path::Path::new("clip_out");
    write_clip(&clip, dir, "lq.png", "hq.png")?;
    println!("wrote {} frames + clip.meta under {}", clip.frames.len(), dir.display());
    Ok(())
}
