//! Pseudo-temporal clips: frame sequences interpolating a degraded anchor
//! toward its clean target, treated as a short video.
//!
//! Built clips satisfy three hard invariants: alphas strictly increase from
//! 0 to 1, endpoints are bit-equal to the inputs, and every intermediate
//! pixel lies within the closed interval spanned by the two endpoint pixels.
//! Interpolation happens in pixel space.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::io::{read_image, write_image};
use crate::image::ImageBuffer;

/// How a clip was constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipKind {
    /// Degraded-to-clean trajectory.
    Base,
    /// Drift-correction trajectory: base-model output to ground truth.
    Drift,
}

impl ClipKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClipKind::Base => "base",
            ClipKind::Drift => "drift",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(ClipKind::Base),
            "drift" => Ok(ClipKind::Drift),
            other => Err(Error::InvalidArgument(format!("unknown clip kind `{other}`"))),
        }
    }
}

/// Ordered frame sequence with its alpha schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoClip {
    pub frames: Vec<ImageBuffer>,
    pub alphas: Vec<f32>,
    pub kind: ClipKind,
}

impl PseudoClip {
    /// Number of frame intervals T (frame count minus one).
    pub fn interval_count(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn first(&self) -> &ImageBuffer {
        &self.frames[0]
    }

    pub fn last(&self) -> &ImageBuffer {
        self.frames.last().expect("clips are never empty")
    }

    /// Wrap frames produced by a sampler. Checks only structural consistency;
    /// the interpolation invariants hold for built clips, not sampled ones.
    pub fn from_frames(frames: Vec<ImageBuffer>, alphas: Vec<f32>, kind: ClipKind) -> Result<Self> {
        if frames.len() < 2 || frames.len() != alphas.len() {
            return Err(Error::InvalidArgument(format!(
                "clip needs >= 2 frames with matching alphas, got {} frames / {} alphas",
                frames.len(),
                alphas.len()
            )));
        }
        let dims = (frames[0].dims(), frames[0].channels());
        if frames.iter().any(|f| (f.dims(), f.channels()) != dims) {
            return Err(Error::InvalidArgument("clip frames must share dimensions".into()));
        }
        Ok(Self { frames, alphas, kind })
    }
}

/// The linear alpha schedule: [0, 1/T, ..., 1], length T+1.
pub fn alpha_schedule(interval_count: usize) -> Result<Vec<f32>> {
    if interval_count == 0 {
        return Err(Error::InvalidArgument("interval count T must be >= 1".into()));
    }
    Ok((0..=interval_count).map(|t| t as f32 / interval_count as f32).collect())
}

/// Build the pseudo-temporal sequence for an LQ/HQ pair: frame t is the
/// convex combination `lq + alpha_t * (hq - lq)`, clamped per pixel into the
/// interval spanned by the endpoints so convexity holds exactly in f32.
pub fn build_pseudo_clip(lq: &ImageBuffer, hq: &ImageBuffer, interval_count: usize) -> Result<PseudoClip> {
    interpolate_clip(lq, hq, interval_count, ClipKind::Base)
}

/// Drift-correction variant: anchor is the base model output, target is the
/// ground truth. Short by design (default K = 4, i.e. 5 frames).
pub fn build_drift_clip(
    base_output: &ImageBuffer,
    hq: &ImageBuffer,
    interval_count: usize,
) -> Result<PseudoClip> {
    interpolate_clip(base_output, hq, interval_count, ClipKind::Drift)
}

/// Default drift-clip interval count.
pub const DRIFT_INTERVALS: usize = 4;

fn interpolate_clip(
    anchor: &ImageBuffer,
    target: &ImageBuffer,
    interval_count: usize,
    kind: ClipKind,
) -> Result<PseudoClip> {
    if anchor.dims() != target.dims() || anchor.channels() != target.channels() {
        return Err(Error::ShapeMismatch {
            op: "build_clip",
            detail: format!(
                "anchor {}x{}x{} vs target {}x{}x{}",
                anchor.height(),
                anchor.width(),
                anchor.channels(),
                target.height(),
                target.width(),
                target.channels()
            ),
        });
    }
    let alphas = alpha_schedule(interval_count)?;
    let mut frames = Vec::with_capacity(interval_count + 1);
    frames.push(anchor.clone());
    for &alpha in &alphas[1..interval_count] {
        let data: Vec<f32> = anchor
            .pixels()
            .iter()
            .zip(target.pixels())
            .map(|(&a, &b)| {
                let v = a + alpha * (b - a);
                v.clamp(a.min(b), a.max(b))
            })
            .collect();
        frames.push(ImageBuffer::new(anchor.height(), anchor.width(), anchor.channels(), data)?);
    }
    frames.push(target.clone());
    Ok(PseudoClip { frames, alphas, kind })
}

// ── on-disk layout ──────────────────────────────────────────────────────
//
// A clip directory holds zero-padded frame files `f000.png .. fNNN.png` and
// a one-line `clip.meta` recording `T=<n> kind=<base|drift> lq=<p> hq=<p>`.

pub const CLIP_META_FILE: &str = "clip.meta";

pub fn write_clip(clip: &PseudoClip, dir: &Path, lq_path: &str, hq_path: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (t, frame) in clip.frames.iter().enumerate() {
        write_image(frame, dir.join(format!("f{t:03}.png")))?;
    }
    let meta = format!(
        "T={} kind={} lq={} hq={}\n",
        clip.interval_count(),
        clip.kind.as_str(),
        lq_path,
        hq_path
    );
    fs::write(dir.join(CLIP_META_FILE), meta)
        .map_err(|e| Error::io(dir.join(CLIP_META_FILE).display().to_string(), e))
}

/// Read a clip directory written by [`write_clip`]. Returns the clip and the
/// recorded (lq, hq) source paths.
pub fn read_clip(dir: &Path) -> Result<(PseudoClip, PathBuf, PathBuf)> {
    let meta_path = dir.join(CLIP_META_FILE);
    let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let mut t = None;
    let mut kind = None;
    let mut lq = None;
    let mut hq = None;
    for field in meta.split_whitespace() {
        match field.split_once('=') {
            Some(("T", v)) => t = v.parse::<usize>().ok(),
            Some(("kind", v)) => kind = ClipKind::parse(v).ok(),
            Some(("lq", v)) => lq = Some(PathBuf::from(v)),
            Some(("hq", v)) => hq = Some(PathBuf::from(v)),
            _ => return Err(Error::Parse { line: 1, msg: format!("bad clip.meta field `{field}`") }),
        }
    }
    let (t, kind) = match (t, kind) {
        (Some(t), Some(kind)) => (t, kind),
        _ => return Err(Error::Parse { line: 1, msg: "clip.meta missing T or kind".into() }),
    };
    let frames: Result<Vec<ImageBuffer>> =
        (0..=t).map(|i| read_image(dir.join(format!("f{i:03}.png")))).collect();
    let clip = PseudoClip::from_frames(frames?, alpha_schedule(t)?, kind)?;
    Ok((clip, lq.unwrap_or_default(), hq.unwrap_or_default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * n * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageBuffer::new(n, n, 3, data).unwrap()
    }

    #[test]
    fn alpha_schedule_values() {
        assert_eq!(alpha_schedule(1).unwrap(), vec![0.0, 1.0]);
        assert_eq!(alpha_schedule(4).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        // 9-frame default: T = 8
        let a = alpha_schedule(8).unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(a[4], 0.5);
        assert!(alpha_schedule(0).is_err());
    }

    #[test]
    fn endpoints_are_bit_equal() {
        let lq = random_image(8, 1);
        let hq = random_image(8, 2);
        let clip = build_pseudo_clip(&lq, &hq, 8).unwrap();
        assert_eq!(clip.frames[0], lq);
        assert_eq!(*clip.last(), hq);
        assert_eq!(clip.kind, ClipKind::Base);
    }

    #[test]
    fn degenerate_pair_gives_constant_clip() {
        let img = random_image(6, 3);
        let clip = build_pseudo_clip(&img, &img, 4).unwrap();
        for frame in &clip.frames {
            assert_eq!(*frame, img);
        }
    }

    #[test]
    fn midpoint_of_black_to_white() {
        let lq = ImageBuffer::zeros(4, 4, 3);
        let hq = ImageBuffer::filled(4, 4, 3, 1.0).unwrap();
        let clip = build_pseudo_clip(&lq, &hq, 2).unwrap();
        assert!(clip.frames[1].pixels().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn convexity_and_monotonicity() {
        let lq = random_image(8, 10);
        let hq = random_image(8, 11);
        let clip = build_pseudo_clip(&lq, &hq, 8).unwrap();
        let n = lq.pixels().len();
        for i in 0..n {
            let (a, b) = (lq.pixels()[i], hq.pixels()[i]);
            let (lo, hi) = (a.min(b), a.max(b));
            let mut prev = a;
            for (t, frame) in clip.frames.iter().enumerate() {
                let v = frame.pixels()[i];
                assert!(v >= lo && v <= hi, "pixel {i} frame {t} out of [{lo}, {hi}]");
                // progression toward the target is monotone per pixel
                if b >= a {
                    assert!(v >= prev);
                } else {
                    assert!(v <= prev);
                }
                prev = v;
            }
        }
        // alphas strictly increasing from 0 to 1
        assert_eq!(clip.alphas[0], 0.0);
        assert_eq!(*clip.alphas.last().unwrap(), 1.0);
        assert!(clip.alphas.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn construction_is_linear_in_the_pair() {
        let lq = random_image(6, 20);
        let hq = random_image(6, 21);
        let a = 0.5f32; // dyadic scalar keeps the scaling exact
        let scale = |img: &ImageBuffer| {
            let data: Vec<f32> = img.pixels().iter().map(|&v| v * a).collect();
            ImageBuffer::new(img.height(), img.width(), img.channels(), data).unwrap()
        };
        let full = build_pseudo_clip(&lq, &hq, 4).unwrap();
        let scaled = build_pseudo_clip(&scale(&lq), &scale(&hq), 4).unwrap();
        for (f, s) in full.frames.iter().zip(&scaled.frames) {
            for (&vf, &vs) in f.pixels().iter().zip(s.pixels()) {
                assert!((vf * a - vs).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn drift_clip_anchors_on_base_output() {
        let base_out = random_image(8, 30);
        let hq = random_image(8, 31);
        let clip = build_drift_clip(&base_out, &hq, DRIFT_INTERVALS).unwrap();
        assert_eq!(clip.kind, ClipKind::Drift);
        assert_eq!(clip.frames[0], base_out);
        assert_eq!(clip.frames.len(), 5);
        assert_eq!(clip.alphas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn drift_clip_degenerate_when_base_matches_hq() {
        let hq = random_image(8, 32);
        let clip = build_drift_clip(&hq, &hq, 4).unwrap();
        for frame in &clip.frames {
            assert_eq!(*frame, hq);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = random_image(8, 1);
        let b = random_image(9, 1);
        assert!(build_pseudo_clip(&a, &b, 4).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clip = build_pseudo_clip(&random_image(8, 40), &random_image(8, 41), 4).unwrap();
        write_clip(&clip, dir.path(), "lq.png", "hq.png").unwrap();
        let (back, lq, hq) = read_clip(dir.path()).unwrap();
        assert_eq!(back.interval_count(), 4);
        assert_eq!(back.kind, ClipKind::Base);
        assert_eq!(lq.to_str().unwrap(), "lq.png");
        assert_eq!(hq.to_str().unwrap(), "hq.png");
        // PNG quantization bounds the per-pixel error
        for (f, g) in back.frames.iter().zip(&clip.frames) {
            for (a, b) in f.pixels().iter().zip(g.pixels()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
            }
        }
    }
}
