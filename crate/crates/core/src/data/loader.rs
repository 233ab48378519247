use std::fs;
use std::io::Write;
use std::path::Path;

use super::{LabeledSample, VisibleAnchor};
use crate::error::{Error, Result};

/// Optional sidecar listing visibility of partial images:
/// `file,visible_fraction,visible_anchor`.
pub const VISIBILITY_FILE: &str = "visibility.csv";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NamingScheme {
    /// `<personID>_c<cameraID>_*.{jpg,png}`; the camera token may carry a
    /// sequence suffix as in `c1s1`.
    #[default]
    Market,
}

/// Parses `(identity, camera)` from a Market-style file name.
pub fn parse_market_name(name: &str) -> Option<(u32, u32)> {
    let stem = name.strip_suffix(".png").or_else(|| name.strip_suffix(".jpg"))?;
    let mut tokens = stem.split('_');
    let id = tokens.next()?;
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let cam = tokens.next()?.strip_prefix('c')?;
    let digits: String = cam.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() || !cam[digits.len()..].chars().all(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    tokens.next()?;
    Some((id.parse().ok()?, digits.parse().ok()?))
}

/// Loads every `.png`/`.jpg` in `dir`, ordered by file name.
pub fn load_directory(dir: &Path, scheme: NamingScheme) -> Result<Vec<LabeledSample>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") || name.ends_with(".jpg") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!("{} contains no images", dir.display())));
    }
    let parsed: Vec<_> = names
        .iter()
        .map(|n| match scheme {
            NamingScheme::Market => parse_market_name(n),
        })
        .collect();
    let bad: Vec<String> = names
        .iter()
        .zip(&parsed)
        .filter(|(_, p)| p.is_none())
        .map(|(n, _)| n.clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::UnparsableNames {
            dir: dir.to_path_buf(),
            files: bad,
        });
    }
    let visibility = read_visibility(dir)?;
    names
        .into_iter()
        .zip(parsed)
        .map(|(name, ids)| {
            let (identity, camera) = ids.unwrap();
            let path = dir.join(&name);
            let image = image::open(&path)?.to_rgb8();
            let mut sample = LabeledSample::new(image, identity, camera);
            if let Some(&(fraction, anchor)) = visibility.get(&name) {
                sample.visible_fraction = fraction;
                sample.visible_anchor = anchor;
            }
            sample.name = Some(name);
            Ok(sample)
        })
        .collect()
}

fn read_visibility(
    dir: &Path,
) -> Result<std::collections::HashMap<String, (f32, VisibleAnchor)>> {
    let path = dir.join(VISIBILITY_FILE);
    let mut out = std::collections::HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() || line.starts_with("file,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::Dataset(format!("{}:{}: malformed visibility row", path.display(), i + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let fraction: f32 = fields[1].parse().map_err(|_| bad())?;
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(bad());
        }
        let anchor = VisibleAnchor::parse(fields[2]).ok_or_else(bad)?;
        out.insert(fields[0].to_string(), (fraction, anchor));
    }
    Ok(out)
}

/// Writes samples as `<id:04>_c<camera>_<seq:06>.png`, `seq` being the
/// sample's position, plus a visibility sidecar when any sample is partial.
/// Returns the written file names in sample order.
pub fn write_directory(dir: &Path, samples: &mut [LabeledSample]) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(samples.len());
    for (seq, s) in samples.iter_mut().enumerate() {
        let name = format!("{:04}_c{}_{:06}.png", s.identity, s.camera, seq);
        s.image.save(dir.join(&name))?;
        s.name = Some(name.clone());
        names.push(name);
    }
    if samples.iter().any(|s| s.visible_fraction < 1.0) {
        let path = dir.join(VISIBILITY_FILE);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut text = String::from("file,visible_fraction,visible_anchor\n");
        for (s, n) in samples.iter().zip(&names) {
            text.push_str(&format!(
                "{n},{},{}\n",
                s.visible_fraction,
                s.visible_anchor.as_str()
            ));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(names)
}
