//! Feature files.
//!
//! Binary part (little-endian): magic `SCPF`, version u32, rows u32,
//! dim u32, stripes u32, then `rows×dim` f32 row-major. The sidecar CSV next
//! to it (same stem, `.csv`) carries per-row labels:
//!
//! ```text
//! # scpnet features v1
//! index,identity,camera,visible_fraction,visible_anchor
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::FeatureGallery;
use crate::data::VisibleAnchor;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"SCPF";
pub const FEATURE_VERSION: u32 = 1;
const SIDECAR_HEADER: &str = "index,identity,camera,visible_fraction,visible_anchor";

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

pub fn write_features(path: &Path, gallery: &FeatureGallery) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    out.write_all(FEATURE_MAGIC).map_err(io)?;
    for v in [FEATURE_VERSION, gallery.len() as u32, gallery.dim() as u32, gallery.stripes as u32] {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in gallery.features.iter() {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)?;

    let side = sidecar(path);
    let mut csv = format!("# scpnet features v1\n{SIDECAR_HEADER}\n");
    for i in 0..gallery.len() {
        csv.push_str(&format!(
            "{i},{},{},{},{}\n",
            gallery.labels[i],
            gallery.cameras[i],
            gallery.visible_fraction[i],
            gallery.visible_anchor[i].as_str()
        ));
    }
    std::fs::write(&side, csv).map_err(|e| Error::io(&side, e))
}

pub fn read_features(path: &Path) -> Result<FeatureGallery> {
    let mut input = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let fmt = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(fmt("not a feature file"));
    }
    let mut header = [0u32; 4];
    for h in &mut header {
        let mut b = [0u8; 4];
        input.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
        *h = u32::from_le_bytes(b);
    }
    let [version, rows, dim, stripes] = header.map(|v| v as usize);
    if version != FEATURE_VERSION as usize {
        return Err(fmt(&format!("unsupported version {version}")));
    }
    let mut bytes = vec![0u8; rows * dim * 4];
    input.read_exact(&mut bytes).map_err(|_| fmt("truncated feature data"))?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let features = Array2::from_shape_vec((rows, dim), data).expect("length checked");

    let side = sidecar(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let (mut labels, mut cameras, mut vis, mut anchors) = (vec![], vec![], vec![], vec![]);
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == SIDECAR_HEADER || line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: malformed row", side.display(), n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 || f[0].parse::<usize>().ok() != Some(labels.len()) {
            return Err(bad());
        }
        labels.push(f[1].parse().map_err(|_| bad())?);
        cameras.push(f[2].parse().map_err(|_| bad())?);
        vis.push(f[3].parse().map_err(|_| bad())?);
        anchors.push(VisibleAnchor::parse(f[4]).ok_or_else(bad)?);
    }
    FeatureGallery::new(features, labels, cameras, vis, anchors, stripes)
}
