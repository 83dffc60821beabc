use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn dims(map: &Tensor) -> Result<(usize, usize)> {
    match *map.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::shape("attention export", format!("map {:?}", map.shape()))),
    }
}

/// ASCII graymap, values in [0,1] scaled to 0..=255.
pub fn map_to_pgm(map: &Tensor) -> Result<String> {
    let (h, w) = dims(map)?;
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in map.data().chunks(w) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn map_to_csv(map: &Tensor) -> Result<String> {
    let (_, w) = dims(map)?;
    let mut out = String::new();
    for row in map.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(",")).expect("write to string");
    }
    Ok(out)
}

/// Writes `{scene}_{box}_A.{pgm,csv}` and, when given, the `Atarget` pair.
pub fn write_attention_maps(
    dir: &Path,
    scene: &str,
    box_index: usize,
    attention: &Tensor,
    target: Option<&Tensor>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let maps = std::iter::once(("A", attention)).chain(target.map(|t| ("Atarget", t)));
    for (tag, map) in maps {
        for (ext, body) in [("pgm", map_to_pgm(map)?), ("csv", map_to_csv(map)?)] {
            let path = dir.join(format!("{scene}_{box_index}_{tag}.{ext}"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
