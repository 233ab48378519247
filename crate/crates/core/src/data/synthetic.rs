use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledSample;

/// Body bands, top to bottom: head, torso, legs, feet.
pub const BANDS: usize = 4;

/// Horizontal extent of each band's body region on a 32-px-wide canvas,
/// scaled for other widths.
const BAND_SPANS: [(u32, u32); BANDS] = [(11, 21), (7, 25), (9, 23), (8, 24)];
const BACKGROUND: [u8; 3] = [96, 96, 96];

/// Striped stand-in for person images: each identity owns one color per
/// body band; every image of it differs only by nuisance factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub images_per_identity: usize,
    #[serde(default = "default_height")]
    pub height: u32,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_cameras")]
    pub num_cameras: u32,
    /// Identity of the first generated person; later ones count up.
    #[serde(default = "default_first_identity")]
    pub first_identity: u32,
    /// When set, band colors are drawn from this many fixed colors, so
    /// identities can share individual bands.
    #[serde(default)]
    pub palette_size: Option<usize>,
    /// Per-image multiplicative brightness drawn from `[1-j, 1+j]`.
    #[serde(default)]
    pub brightness_jitter: f32,
    /// Per-image horizontal shift drawn from `[-s, s]` pixels.
    #[serde(default)]
    pub max_shift: u32,
    /// Standard deviation of additive per-pixel noise, in 0–255 units.
    #[serde(default)]
    pub noise_sigma: f32,
}

fn default_height() -> u32 {
    64
}
fn default_width() -> u32 {
    32
}
fn default_cameras() -> u32 {
    2
}
fn default_first_identity() -> u32 {
    1
}

impl SyntheticSpec {
    pub fn clean(num_identities: usize, images_per_identity: usize) -> Self {
        Self {
            num_identities,
            images_per_identity,
            height: default_height(),
            width: default_width(),
            num_cameras: default_cameras(),
            first_identity: default_first_identity(),
            palette_size: None,
            brightness_jitter: 0.0,
            max_shift: 0,
            noise_sigma: 0.0,
        }
    }

    /// Nuisance settings used for the desk-scale experiments.
    pub fn desk(num_identities: usize, images_per_identity: usize) -> Self {
        Self {
            palette_size: Some(6),
            brightness_jitter: 0.2,
            max_shift: 2,
            noise_sigma: 12.0,
            ..Self::clean(num_identities, images_per_identity)
        }
    }

    /// Rows `[start, end)` of band `r`.
    pub fn band_rows(&self, r: usize) -> (u32, u32) {
        let h = self.height as usize;
        ((r * h / BANDS) as u32, ((r + 1) * h / BANDS) as u32)
    }
}

fn palette(size: usize) -> Vec<[u8; 3]> {
    // Evenly spaced saturated hues.
    (0..size)
        .map(|i| {
            let hue = i as f32 / size as f32 * 6.0;
            let x = 1.0 - (hue % 2.0 - 1.0).abs();
            let (r, g, b) = match hue as u32 {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            [(r * 215.0 + 20.0) as u8, (g * 215.0 + 20.0) as u8, (b * 215.0 + 20.0) as u8]
        })
        .collect()
}

/// Generates `num_identities × images_per_identity` samples, identity-major.
/// Identity colors are drawn first for all identities, then nuisance per
/// image. Cameras cycle `1..=num_cameras` within each identity.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Vec<LabeledSample> {
    let colors = spec.palette_size.map(|n| palette(n.max(1)));
    let identities: Vec<[[u8; 3]; BANDS]> = (0..spec.num_identities)
        .map(|_| {
            std::array::from_fn(|_| match &colors {
                Some(p) => p[rng.random_range(0..p.len())],
                None => [rng.random(), rng.random(), rng.random()],
            })
        })
        .collect();
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0f32, spec.noise_sigma).unwrap());
    let scale = spec.width as f32 / 32.0;
    let mut out = Vec::with_capacity(spec.num_identities * spec.images_per_identity);
    for (i, bands) in identities.iter().enumerate() {
        for j in 0..spec.images_per_identity {
            let brightness = if spec.brightness_jitter > 0.0 {
                1.0 + rng.random_range(-spec.brightness_jitter..=spec.brightness_jitter)
            } else {
                1.0
            };
            let shift = if spec.max_shift > 0 {
                rng.random_range(-(spec.max_shift as i32)..=spec.max_shift as i32)
            } else {
                0
            };
            let mut img = RgbImage::from_pixel(spec.width, spec.height, Rgb(BACKGROUND));
            for (r, color) in bands.iter().enumerate() {
                let (y0, y1) = spec.band_rows(r);
                let (a, b) = BAND_SPANS[r];
                let x0 = ((a as f32 * scale).round() as i32 + shift).max(0) as u32;
                let x1 = ((b as f32 * scale).round() as i32 + shift).min(spec.width as i32).max(0) as u32;
                for y in y0..y1 {
                    for x in x0..x1 {
                        img.put_pixel(x, y, Rgb(*color));
                    }
                }
            }
            if brightness != 1.0 || noise.is_some() {
                for px in img.pixels_mut() {
                    for c in 0..3 {
                        let mut v = px[c] as f32 * brightness;
                        if let Some(n) = &noise {
                            v += n.sample(rng);
                        }
                        px[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
            let camera = (j as u32 % spec.num_cameras.max(1)) + 1;
            out.push(LabeledSample::new(img, spec.first_identity + i as u32, camera));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_directory, write_directory, NamingScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trips_through_directory() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut samples = generate_synthetic(&SyntheticSpec::desk(2, 2), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let names = write_directory(dir.path(), &mut samples).unwrap();
        assert_eq!(names.len(), 4);
        let back = load_directory(dir.path(), NamingScheme::Market).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!((a.identity, a.camera), (b.identity, b.camera));
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn clean_images_of_an_identity_are_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = generate_synthetic(&SyntheticSpec::clean(3, 4), &mut rng);
        for id in samples.chunks(4) {
            assert!(id.iter().all(|s| s.image == id[0].image));
        }
        assert_ne!(samples[0].image, samples[4].image);
    }

    #[test]
    fn bands_partition_the_canvas() {
        let spec = SyntheticSpec::clean(1, 1);
        let mut covered = 0;
        for r in 0..BANDS {
            let (a, b) = spec.band_rows(r);
            assert_eq!(a, covered);
            assert_eq!((a, b), (r as u32 * 16, (r as u32 + 1) * 16));
            covered = b;
        }
        assert_eq!(covered, spec.height);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = &generate_synthetic(&spec, &mut rng)[0];
        // The band color fills its rows at the canvas center column.
        for r in 0..BANDS {
            let (a, b) = spec.band_rows(r);
            let c = s.image.get_pixel(16, a);
            assert!((a..b).all(|y| s.image.get_pixel(16, y) == c));
        }
    }

    #[test]
    fn nuisance_varies_images_but_not_identity_colors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            brightness_jitter: 0.0,
            ..SyntheticSpec::desk(1, 8)
        };
        let samples = generate_synthetic(&spec, &mut rng);
        assert!(samples.iter().any(|s| s.image != samples[0].image));
        let center = |s: &LabeledSample| *s.image.get_pixel(16, 20);
        assert!(samples.iter().all(|s| center(s) == center(&samples[0])));
        let cams: Vec<u32> = samples.iter().map(|s| s.camera).collect();
        assert_eq!(&cams[..4], &[1, 2, 1, 2]);
    }
}
