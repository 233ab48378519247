use std::fmt::Write as _;
use std::fs;

use anyhow::{Context, Result};
use image::{imageops, GrayImage, Luma};

use scpnet_core::data::{preprocess_eval, stack_batch, ImagePipeline, LabeledSample};
use scpnet_core::model::branches::{part_activation_maps, stripe_mass_share};

use super::load_checkpoint;
use crate::args::ActivmapArgs;
use crate::config::usage;

pub fn run(args: &ActivmapArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&args.checkpoint)?;
    if !args.image.is_file() {
        return Err(usage(format!("image {} does not exist", args.image.display())));
    }
    let image = image::open(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))?
        .to_rgb8();
    let sample = args
        .occlusion
        .apply(vec![LabeledSample::new(image, 0, 0)])?
        .remove(0);
    let pipeline = ImagePipeline::for_model(&meta.model, meta.normalization);
    let batch = stack_batch(&[preprocess_eval(&sample.image, &pipeline)?])?;
    let inference = model.infer(&batch)?;
    let expanded = inference.expanded.index_axis_move(ndarray::Axis(0), 0);
    let stripes = meta.model.stripes;
    let maps = part_activation_maps(&expanded, stripes)?;

    fs::create_dir_all(&args.out)?;
    let mut table = String::from("# scpnet activation mass v1\npart,in_stripe_share\n");
    for (r, map) in maps.iter().enumerate() {
        let (h, w) = map.dim();
        let min = map.iter().copied().fold(f32::INFINITY, f32::min);
        let max = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = if max > min { max - min } else { 1.0 };
        let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            let v = (map[[y as usize, x as usize]] - min) / span;
            Luma([(v * 255.0).round() as u8])
        });
        let gray = if args.scale > 1 {
            imageops::resize(&gray, w as u32 * args.scale, h as u32 * args.scale, imageops::FilterType::Nearest)
        } else {
            gray
        };
        gray.save(args.out.join(format!("part_{r}.png")))?;
        let share = stripe_mass_share(map, r, stripes)?;
        writeln!(table, "{r},{share}").unwrap();
        println!("part {r}: {:.1}% of activation mass inside stripe {r}", 100.0 * share);
    }
    fs::write(args.out.join("mass.csv"), table)?;
    Ok(())
}
