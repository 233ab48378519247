use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Normalization;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Geometry and normalization of the input pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePipeline {
    pub height: usize,
    pub width: usize,
    /// Training images are resized to this size before random cropping.
    pub resize_height: usize,
    pub resize_width: usize,
    pub normalization: Normalization,
}

impl ImagePipeline {
    /// Crop size from the model, resize size 9/8 of it (288×144 for 256×128).
    pub fn for_model(config: &ModelConfig, normalization: Normalization) -> Self {
        Self {
            height: config.input_height,
            width: config.input_width,
            resize_height: config.input_height * 9 / 8,
            resize_width: config.input_width * 9 / 8,
            normalization,
        }
    }
}

fn check_image(image: &RgbImage) -> Result<()> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate image of size {}×{}",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

fn normalize(image: &RgbImage, x0: u32, y0: u32, h: usize, w: usize, norm: &Normalization) -> Array3<f32> {
    Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        let v = image.get_pixel(x0 + x as u32, y0 + y as u32)[c] as f32 / 255.0;
        (v - norm.mean[c]) / norm.std[c]
    })
}

/// Resize, random crop, random horizontal flip (p = 0.5), standardize.
/// Draws exactly three values from `rng`: crop row, crop column, flip.
pub fn preprocess_train<R: Rng + ?Sized>(
    image: &RgbImage,
    pipeline: &ImagePipeline,
    rng: &mut R,
) -> Result<Array3<f32>> {
    check_image(image)?;
    let resized = imageops::resize(
        image,
        pipeline.resize_width as u32,
        pipeline.resize_height as u32,
        FilterType::Triangle,
    );
    let y0 = rng.random_range(0..=(pipeline.resize_height - pipeline.height)) as u32;
    let x0 = rng.random_range(0..=(pipeline.resize_width - pipeline.width)) as u32;
    let flip = rng.random_bool(0.5);
    let out = normalize(&resized, x0, y0, pipeline.height, pipeline.width, &pipeline.normalization);
    Ok(if flip { flip_horizontal(&out) } else { out })
}

/// Deterministic resize straight to the crop size; no flip.
pub fn preprocess_eval(image: &RgbImage, pipeline: &ImagePipeline) -> Result<Array3<f32>> {
    check_image(image)?;
    let resized = imageops::resize(
        image,
        pipeline.width as u32,
        pipeline.height as u32,
        FilterType::Triangle,
    );
    Ok(normalize(&resized, 0, 0, pipeline.height, pipeline.width, &pipeline.normalization))
}

/// Mirrors a `C×H×W` grid left to right.
pub fn flip_horizontal(grid: &Array3<f32>) -> Array3<f32> {
    let mut out = grid.clone();
    out.invert_axis(Axis(2));
    out.as_standard_layout().into_owned()
}

/// Stacks equally sized `C×H×W` grids into an `N×C×H×W` batch.
pub fn stack_batch(items: &[Array3<f32>]) -> Result<Array4<f32>> {
    let views: Vec<_> = items.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(format!("cannot stack batch: {e}")))
}
