use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

use super::{LabeledSample, VisibleAnchor};
use crate::error::{Error, Result};

/// How the visible crop of a partial image is brought back to full size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialMode {
    /// Stretch the kept rows over the full height.
    #[default]
    Rescale,
    /// Keep the rows in place and black out the rest.
    ZeroPad,
}

/// Keeps the top (or bottom) `fraction` of rows and rescales them to the
/// original size.
pub fn occlude(sample: &LabeledSample, fraction: f32, anchor: VisibleAnchor) -> Result<LabeledSample> {
    occlude_with(sample, fraction, anchor, PartialMode::Rescale)
}

pub fn occlude_with(
    sample: &LabeledSample,
    fraction: f32,
    anchor: VisibleAnchor,
    mode: PartialMode,
) -> Result<LabeledSample> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "visible fraction {fraction} outside (0, 1]"
        )));
    }
    let (w, h) = sample.image.dimensions();
    let kept = ((h as f32 * fraction).round() as u32).clamp(1, h);
    let y0 = match anchor {
        VisibleAnchor::Top => 0,
        VisibleAnchor::Bottom => h - kept,
    };
    let image = if kept == h {
        sample.image.clone()
    } else {
        match mode {
            PartialMode::Rescale => {
                let crop = imageops::crop_imm(&sample.image, 0, y0, w, kept).to_image();
                imageops::resize(&crop, w, h, FilterType::Triangle)
            }
            PartialMode::ZeroPad => RgbImage::from_fn(w, h, |x, y| {
                if y >= y0 && y < y0 + kept {
                    *sample.image.get_pixel(x, y)
                } else {
                    Rgb([0, 0, 0])
                }
            }),
        }
    };
    Ok(LabeledSample {
        image,
        visible_fraction: sample.visible_fraction * fraction,
        visible_anchor: anchor,
        ..sample.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows_image() -> LabeledSample {
        LabeledSample::new(RgbImage::from_fn(4, 8, |_, y| Rgb([y as u8 * 30, 0, 0])), 1, 1)
    }

    #[test]
    fn full_fraction_keeps_pixels() {
        let s = rows_image();
        let o = occlude(&s, 1.0, VisibleAnchor::Bottom).unwrap();
        assert_eq!(o.image, s.image);
        assert_eq!(o.visible_fraction, 1.0);
        assert_eq!(o.visible_anchor, VisibleAnchor::Bottom);
    }

    #[test]
    fn invalid_fractions() {
        let s = rows_image();
        for f in [0.0, -0.5, 1.5, f32::NAN] {
            assert!(occlude(&s, f, VisibleAnchor::Top).is_err());
        }
    }

    #[test]
    fn top_half_drops_bottom_rows() {
        let s = rows_image();
        let o = occlude(&s, 0.5, VisibleAnchor::Top).unwrap();
        assert_eq!(o.image.dimensions(), (4, 8));
        assert_eq!(o.visible_fraction, 0.5);
        // Kept rows had red values 0..=90; none of the bottom rows (120..=210) survive.
        assert!(o.image.pixels().all(|p| p[0] <= 90));
        let padded = occlude_with(&s, 0.5, VisibleAnchor::Top, PartialMode::ZeroPad).unwrap();
        assert_eq!(padded.image.get_pixel(0, 3)[0], 90);
        assert_eq!(padded.image.get_pixel(0, 6)[0], 0);
    }

    #[test]
    fn synthetic_top_half_shows_two_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = SyntheticSpec {
            palette_size: None,
            ..SyntheticSpec::clean(1, 1)
        };
        let s = &generate_synthetic(&spec, &mut rng)[0];
        let color = |img: &RgbImage, y: u32| *img.get_pixel(16, y);
        let band: Vec<_> = (0..4).map(|r| color(&s.image, r * 16 + 8)).collect();
        let o = occlude(s, 0.5, VisibleAnchor::Top).unwrap();
        // Bands 0-1 now span rows 0-31 and 32-63.
        assert_eq!(color(&o.image, 16), band[0]);
        assert_eq!(color(&o.image, 48), band[1]);
        for y in 0..64 {
            let c = color(&o.image, y);
            assert!(c != band[2] || band[2] == band[0] || band[2] == band[1]);
            assert!(c != band[3] || band[3] == band[0] || band[3] == band[1]);
        }
    }
}
