//! Seeded synthetic degradations standing in for captured low-quality data.
//!
//! A [`DegradationRecipe`] is an ordered list of parameterized steps plus a
//! 64-bit seed; applying it is fully deterministic. Step `i` draws its
//! randomness from `ChaCha8Rng::seed_from_u64(seed.wrapping_add(i))`, which
//! makes composition equivalent to sequential application when the second
//! recipe's seed is threaded past the first one's steps.
//!
//! Serialized one-line form: `name(k=v,...)|name(...)#seed`, e.g.
//! `lowlight(gamma=2.2,scale=0.35,noise=5)|blur(sigma=1.5)#42`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Depth field used by the haze model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthMode {
    /// d(row) = 1 everywhere.
    Constant,
    /// d(row) = (row + 0.5) / H, deepening toward the bottom.
    VerticalGradient,
}

/// One degradation step with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum DegradationStep {
    GaussianBlur { sigma: f32 },
    GaussianNoise { sigma_255: f32 },
    BlockCompress { quality: u8 },
    Haze { beta: f32, airlight: f32, depth_mode: DepthMode },
    RainStreaks { count: u32, length_px: u32, angle_deg: f32, intensity: f32 },
    Raindrop { count: u32, radius_px: u32, alpha: f32 },
    LowLight { gamma: f32, scale: f32, noise_sigma_255: f32 },
}

impl DegradationStep {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DegradationStep::GaussianBlur { sigma } => (0.0..=5.0).contains(&sigma),
            DegradationStep::GaussianNoise { sigma_255 } => (0.0..=255.0).contains(&sigma_255),
            DegradationStep::BlockCompress { quality } => (1..=100).contains(&quality),
            DegradationStep::Haze { beta, airlight, .. } => beta >= 0.0 && (0.0..=1.0).contains(&airlight),
            DegradationStep::RainStreaks { length_px, intensity, .. } => {
                length_px >= 1 && (0.0..=1.0).contains(&intensity)
            }
            DegradationStep::Raindrop { radius_px, alpha, .. } => {
                radius_px >= 1 && (0.0..=1.0).contains(&alpha)
            }
            DegradationStep::LowLight { gamma, scale, noise_sigma_255 } => {
                gamma >= 1.0 && scale > 0.0 && scale <= 1.0 && (0.0..=255.0).contains(&noise_sigma_255)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degradation parameter out of range: {self:?}")))
        }
    }

}

/// Seeded, serializable description of composed degradations.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationRecipe {
    pub steps: Vec<DegradationStep>,
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn new(steps: Vec<DegradationStep>, seed: u64) -> Result<Self> {
        let recipe = Self { steps, seed };
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<()> {
        for step in &self.steps {
            step.validate()?;
        }
        Ok(())
    }

    /// One-line text form; parses back to an identical recipe.
    pub fn serialize(&self) -> String {
        let steps: Vec<String> = self
            .steps
            .iter()
            .map(|s| match s {
                DegradationStep::GaussianBlur { sigma } => format!("blur(sigma={sigma})"),
                DegradationStep::GaussianNoise { sigma_255 } => format!("noise(sigma255={sigma_255})"),
                DegradationStep::BlockCompress { quality } => format!("jpeg(quality={quality})"),
                DegradationStep::Haze { beta, airlight, depth_mode } => {
                    let d = match depth_mode {
                        DepthMode::Constant => "constant",
                        DepthMode::VerticalGradient => "vgrad",
                    };
                    format!("haze(beta={beta},airlight={airlight},depth={d})")
                }
                DegradationStep::RainStreaks { count, length_px, angle_deg, intensity } => {
                    format!("rain(count={count},length={length_px},angle={angle_deg},intensity={intensity})")
                }
                DegradationStep::Raindrop { count, radius_px, alpha } => {
                    format!("raindrop(count={count},radius={radius_px},alpha={alpha})")
                }
                DegradationStep::LowLight { gamma, scale, noise_sigma_255 } => {
                    format!("lowlight(gamma={gamma},scale={scale},noise={noise_sigma_255})")
                }
            })
            .collect();
        format!("{}#{}", steps.join("|"), self.seed)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse { line: 1, msg };
        let (body, seed) = text
            .rsplit_once('#')
            .ok_or_else(|| bad("missing `#seed` suffix".into()))?;
        let seed: u64 = seed.trim().parse().map_err(|_| bad(format!("invalid seed `{seed}`")))?;
        let mut steps = Vec::new();
        for part in body.split('|') {
            let part = part.trim();
            let (name, rest) = part
                .split_once('(')
                .ok_or_else(|| bad(format!("malformed step `{part}`")))?;
            let args = rest
                .strip_suffix(')')
                .ok_or_else(|| bad(format!("unterminated step `{part}`")))?;
            let mut kv = std::collections::BTreeMap::new();
            for pair in args.split(',').filter(|p| !p.is_empty()) {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| bad(format!("malformed parameter `{pair}`")))?;
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
            let f = |k: &str| -> Result<f32> {
                kv.get(k)
                    .ok_or_else(|| bad(format!("step `{name}` missing `{k}`")))?
                    .parse()
                    .map_err(|_| bad(format!("step `{name}`: bad value for `{k}`")))
            };
            let u = |k: &str| -> Result<u32> {
                kv.get(k)
                    .ok_or_else(|| bad(format!("step `{name}` missing `{k}`")))?
                    .parse()
                    .map_err(|_| bad(format!("step `{name}`: bad value for `{k}`")))
            };
            let step = match name {
                "blur" => DegradationStep::GaussianBlur { sigma: f("sigma")? },
                "noise" => DegradationStep::GaussianNoise { sigma_255: f("sigma255")? },
                "jpeg" => DegradationStep::BlockCompress { quality: u("quality")? as u8 },
                "haze" => DegradationStep::Haze {
                    beta: f("beta")?,
                    airlight: f("airlight")?,
                    depth_mode: match kv.get("depth").map(String::as_str) {
                        Some("constant") => DepthMode::Constant,
                        Some("vgrad") => DepthMode::VerticalGradient,
                        other => return Err(bad(format!("haze: bad depth `{other:?}`"))),
                    },
                },
                "rain" => DegradationStep::RainStreaks {
                    count: u("count")?,
                    length_px: u("length")?,
                    angle_deg: f("angle")?,
                    intensity: f("intensity")?,
                },
                "raindrop" => DegradationStep::Raindrop {
                    count: u("count")?,
                    radius_px: u("radius")?,
                    alpha: f("alpha")?,
                },
                "lowlight" => DegradationStep::LowLight {
                    gamma: f("gamma")?,
                    scale: f("scale")?,
                    noise_sigma_255: f("noise")?,
                },
                other => return Err(bad(format!("unknown degradation `{other}`"))),
            };
            steps.push(step);
        }
        Self::new(steps, seed)
    }
}

/// Concatenate recipes; the seed of the first is retained. Equivalent to
/// sequential application when later seeds are threaded per-step (recipe
/// `b`'s seed equals `a.seed + a.steps.len()`).
pub fn compose(recipes: &[DegradationRecipe]) -> Result<DegradationRecipe> {
    let first = recipes
        .first()
        .ok_or_else(|| Error::InvalidArgument("compose requires at least one recipe".into()))?;
    let steps = recipes.iter().flat_map(|r| r.steps.iter().cloned()).collect();
    DegradationRecipe::new(steps, first.seed)
}

/// Apply all steps in order. Deterministic given (image, recipe); the output
/// is clamped to [0, 1].
pub fn apply_recipe(hq: &ImageBuffer, recipe: &DegradationRecipe) -> Result<ImageBuffer> {
    recipe.validate()?;
    let mut img = hq.clone();
    for (i, step) in recipe.steps.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed.wrapping_add(i as u64));
        img = apply_step(&img, step, &mut rng)?;
    }
    Ok(img)
}

fn apply_step(img: &ImageBuffer, step: &DegradationStep, rng: &mut ChaCha8Rng) -> Result<ImageBuffer> {
    match *step {
        DegradationStep::GaussianBlur { sigma } => gaussian_blur(img, sigma),
        DegradationStep::GaussianNoise { sigma_255 } => add_gaussian_noise(img, sigma_255, rng),
        DegradationStep::BlockCompress { quality } => block_compress(img, quality),
        DegradationStep::Haze { beta, airlight, depth_mode } => haze(img, beta, airlight, depth_mode),
        DegradationStep::RainStreaks { count, length_px, angle_deg, intensity } => {
            rain_streaks(img, count, length_px, angle_deg, intensity, rng)
        }
        DegradationStep::Raindrop { count, radius_px, alpha } => raindrops(img, count, radius_px, alpha, rng),
        DegradationStep::LowLight { gamma, scale, noise_sigma_255 } => {
            low_light(img, gamma, scale, noise_sigma_255, rng)
        }
    }
}

// ── gaussian blur ───────────────────────────────────────────────────────

/// Normalized 1-D Gaussian kernel of radius ceil(3 sigma).
fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return vec![1.0];
    }
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / s2).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.iter().map(|&v| v as f32).collect()
}

/// Separable convolution with replicated borders.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f32) -> Result<ImageBuffer> {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return Ok(img.clone());
    }
    let radius = (kernel.len() / 2) as isize;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut tmp = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * img.get(y, sx, ch);
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    ImageBuffer::from_raw_clamped(h, w, c, &out)
}

// ── gaussian noise ──────────────────────────────────────────────────────

fn add_gaussian_noise(img: &ImageBuffer, sigma_255: f32, rng: &mut ChaCha8Rng) -> Result<ImageBuffer> {
    let sigma = sigma_255 as f64 / 255.0;
    let normal = Normal::new(0.0f64, sigma.max(1e-12)).expect("valid stddev");
    let data: Vec<f32> = img
        .pixels()
        .iter()
        .map(|&v| {
            if sigma_255 == 0.0 {
                v
            } else {
                v + normal.sample(rng) as f32
            }
        })
        .collect();
    ImageBuffer::from_raw_clamped(img.height(), img.width(), img.channels(), &data)
}

// ── block compression ──────────────────────────────────────────────────

/// JPEG Annex K luminance quantization table.
const LUMA_QTABLE: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Quality-scaled quantization table; quality 100 yields all ones.
pub fn scaled_qtable(quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut out = [0.0; 64];
    for (o, &t) in out.iter_mut().zip(LUMA_QTABLE.iter()) {
        *o = ((t * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

/// Orthonormal 8x8 DCT-II of a block (row-major), f64.
pub fn dct_8x8(block: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            let cv = if v == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    acc += block[y * 8 + x]
                        * (((2 * y + 1) as f64) * u as f64 * std::f64::consts::PI / 16.0).cos()
                        * (((2 * x + 1) as f64) * v as f64 * std::f64::consts::PI / 16.0).cos();
                }
            }
            out[u * 8 + v] = 0.25 * cu * cv * acc;
        }
    }
    out
}

/// Inverse of [`dct_8x8`].
pub fn idct_8x8(coef: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                for v in 0..8 {
                    let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                    let cv = if v == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                    acc += cu
                        * cv
                        * coef[u * 8 + v]
                        * (((2 * y + 1) as f64) * u as f64 * std::f64::consts::PI / 16.0).cos()
                        * (((2 * x + 1) as f64) * v as f64 * std::f64::consts::PI / 16.0).cos();
                }
            }
            out[y * 8 + x] = 0.25 * acc;
        }
    }
    out
}

/// Per-channel 8x8 DCT quantization with the scaled luminance table. No
/// chroma subsampling; blocks at the border read edge-replicated pixels.
pub fn block_compress(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    let qtab = scaled_qtable(quality);
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = vec![0.0f32; h * w * c];
    let blocks_y = h.div_ceil(8);
    let blocks_x = w.div_ceil(8);
    for ch in 0..c {
        for by in 0..blocks_y {
            for bx in 0..blocks_x {
                let mut block = [0.0f64; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let sy = (by * 8 + y).min(h - 1);
                        let sx = (bx * 8 + x).min(w - 1);
                        block[y * 8 + x] = img.get(sy, sx, ch) as f64 * 255.0 - 128.0;
                    }
                }
                let mut coef = dct_8x8(&block);
                for (cv, &q) in coef.iter_mut().zip(qtab.iter()) {
                    *cv = (*cv / q).round() * q;
                }
                let rec = idct_8x8(&coef);
                for y in 0..8 {
                    for x in 0..8 {
                        let (sy, sx) = (by * 8 + y, bx * 8 + x);
                        if sy < h && sx < w {
                            out[(sy * w + sx) * c + ch] = ((rec[y * 8 + x] + 128.0) / 255.0) as f32;
                        }
                    }
                }
            }
        }
    }
    ImageBuffer::from_raw_clamped(h, w, c, &out)
}

// ── haze ────────────────────────────────────────────────────────────────

/// Scattering model x*t + A*(1-t) with transmission t = exp(-beta * d(row)).
pub fn haze(img: &ImageBuffer, beta: f32, airlight: f32, depth_mode: DepthMode) -> Result<ImageBuffer> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        let d = match depth_mode {
            DepthMode::Constant => 1.0f32,
            DepthMode::VerticalGradient => (y as f32 + 0.5) / h as f32,
        };
        let t = (-beta * d).exp();
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = img.get(y, x, ch) * t + airlight * (1.0 - t);
            }
        }
    }
    ImageBuffer::from_raw_clamped(h, w, c, &out)
}

// ── rain streaks ────────────────────────────────────────────────────────

fn rain_streaks(
    img: &ImageBuffer,
    count: u32,
    length_px: u32,
    angle_deg: f32,
    intensity: f32,
    rng: &mut ChaCha8Rng,
) -> Result<ImageBuffer> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut mask = vec![0.0f32; h * w];
    let a = (angle_deg as f64).to_radians();
    let (dy, dx) = (a.cos(), a.sin());
    for _ in 0..count {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        // half-pixel steps along the streak, bilinearly splatted
        let steps = length_px * 2;
        for s in 0..=steps {
            let t = s as f64 * 0.5 - length_px as f64 * 0.5;
            let py = cy + t * dy;
            let px = cx + t * dx;
            splat(&mut mask, h, w, py, px, intensity * 0.5);
        }
    }
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = img.get(y, x, ch) + mask[y * w + x];
            }
        }
    }
    ImageBuffer::from_raw_clamped(h, w, c, &out)
}

fn splat(mask: &mut [f32], h: usize, w: usize, py: f64, px: f64, weight: f32) {
    let y0 = py.floor();
    let x0 = px.floor();
    let (fy, fx) = ((py - y0) as f32, (px - x0) as f32);
    for (oy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (ox, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let yy = y0 as i64 + oy;
            let xx = x0 as i64 + ox;
            if yy >= 0 && (yy as usize) < h && xx >= 0 && (xx as usize) < w {
                mask[yy as usize * w + xx as usize] += weight * wy * wx;
            }
        }
    }
}

// ── raindrops ───────────────────────────────────────────────────────────

/// Soft-disk occlusions blended toward light gray at low alpha; a coarse
/// stand-in for lens-adherent raindrops.
fn raindrops(
    img: &ImageBuffer,
    count: u32,
    radius_px: u32,
    alpha: f32,
    rng: &mut ChaCha8Rng,
) -> Result<ImageBuffer> {
    const DROP_LEVEL: f32 = 0.8;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out: Vec<f32> = img.pixels().to_vec();
    let r = radius_px as f64;
    for _ in 0..count {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let y_lo = ((cy - r).floor().max(0.0)) as usize;
        let y_hi = ((cy + r).ceil() as usize).min(h - 1);
        let x_lo = ((cx - r).floor().max(0.0)) as usize;
        let x_hi = ((cx + r).ceil() as usize).min(w - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dy = (y as f64 + 0.5 - cy) / r;
                let dx = (x as f64 + 0.5 - cx) / r;
                let fall = (1.0 - (dy * dy + dx * dx)).max(0.0) as f32;
                if fall > 0.0 {
                    for ch in 0..c {
                        let idx = (y * w + x) * c + ch;
                        out[idx] += alpha * fall * (DROP_LEVEL - out[idx]);
                    }
                }
            }
        }
    }
    ImageBuffer::from_raw_clamped(h, w, c, &out)
}

// ── low light ───────────────────────────────────────────────────────────

fn low_light(
    img: &ImageBuffer,
    gamma: f32,
    scale: f32,
    noise_sigma_255: f32,
    rng: &mut ChaCha8Rng,
) -> Result<ImageBuffer> {
    let dimmed: Vec<f32> = img.pixels().iter().map(|&v| (v * scale).powf(gamma)).collect();
    let tmp = ImageBuffer::from_raw_clamped(img.height(), img.width(), img.channels(), &dimmed)?;
    add_gaussian_noise(&tmp, noise_sigma_255, rng)
}

// ── categories ──────────────────────────────────────────────────────────

/// Canonical category names in report column order: 7 isolated then 13
/// coupled, matching the evaluation table layout.
pub const CATEGORY_NAMES: [&str; 20] = [
    "Blur", "Noise", "JPEG", "Haze", "Rain", "Raindrop", "Lowlight", "B+N", "B+J", "N+J", "R+H",
    "L+H", "L+R", "L+B", "L+N", "L+J", "L+B+N", "L+B+J", "L+N+J", "B+N+J",
];

/// One of the 20 degradation categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CategoryLabel(usize);

impl CategoryLabel {
    pub fn parse(name: &str) -> Result<Self> {
        CATEGORY_NAMES
            .iter()
            .position(|&n| n == name)
            .map(CategoryLabel)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{name}`")))
    }

    pub fn all() -> impl Iterator<Item = CategoryLabel> {
        (0..CATEGORY_NAMES.len()).map(CategoryLabel)
    }

    pub fn name(&self) -> &'static str {
        CATEGORY_NAMES[self.0]
    }

    /// Position in the canonical column order.
    pub fn index(&self) -> usize {
        self.0
    }

    /// The degradation kinds this category composes, in label order.
    /// Coupled labels are '+'-joined letters: B(lur), N(oise), J(PEG),
    /// H(aze), R(ain), L(owlight).
    fn kinds(&self) -> Vec<&'static str> {
        match self.name() {
            "Blur" => vec!["blur"],
            "Noise" => vec!["noise"],
            "JPEG" => vec!["jpeg"],
            "Haze" => vec!["haze"],
            "Rain" => vec!["rain"],
            "Raindrop" => vec!["raindrop"],
            "Lowlight" => vec!["lowlight"],
            coupled => coupled
                .split('+')
                .map(|letter| match letter {
                    "B" => "blur",
                    "N" => "noise",
                    "J" => "jpeg",
                    "H" => "haze",
                    "R" => "rain",
                    "L" => "lowlight",
                    other => unreachable!("letter {other} cannot appear in a validated label"),
                })
                .collect(),
        }
    }
}

impl std::fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Draw a recipe for a category: one step per degradation letter, parameters
/// uniform over the documented desk-scale ranges. The recipe seed is drawn
/// first, then step parameters in label order, each field in declaration
/// order.
pub fn sample_recipe(category: CategoryLabel, rng: &mut ChaCha8Rng) -> DegradationRecipe {
    let seed = rng.gen::<u64>();
    let steps = category
        .kinds()
        .iter()
        .map(|&kind| match kind {
            "blur" => DegradationStep::GaussianBlur { sigma: uniform(rng, 1.0, 3.0) },
            "noise" => DegradationStep::GaussianNoise { sigma_255: uniform(rng, 5.0, 50.0) },
            "jpeg" => DegradationStep::BlockCompress { quality: rng.gen_range(10..=50) },
            "haze" => DegradationStep::Haze {
                beta: uniform(rng, 0.5, 2.0),
                airlight: uniform(rng, 0.7, 1.0),
                depth_mode: if rng.gen_range(0..2) == 0 {
                    DepthMode::Constant
                } else {
                    DepthMode::VerticalGradient
                },
            },
            "rain" => DegradationStep::RainStreaks {
                count: rng.gen_range(20..=60),
                length_px: rng.gen_range(8..=16),
                angle_deg: uniform(rng, -30.0, 30.0),
                intensity: uniform(rng, 0.3, 0.7),
            },
            "raindrop" => DegradationStep::Raindrop {
                count: rng.gen_range(5..=15),
                radius_px: rng.gen_range(3..=8),
                alpha: uniform(rng, 0.3, 0.6),
            },
            "lowlight" => DegradationStep::LowLight {
                gamma: uniform(rng, 2.0, 3.0),
                scale: uniform(rng, 0.2, 0.5),
                noise_sigma_255: uniform(rng, 0.0, 5.0),
            },
            other => unreachable!("unknown kind {other}"),
        })
        .collect();
    DegradationRecipe { steps, seed }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f32 {
    rng.gen_range(lo..hi) as f32
}
