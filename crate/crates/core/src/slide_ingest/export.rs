use super::filter::Tile;
use super::manifest::TileRecord;
use crate::dataset::TileSet;
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

pub fn tile_path(r: &TileRecord) -> PathBuf {
    PathBuf::from(&r.class_label).join(format!("{}_{}_{}.png", r.slide_id, r.origin_xy[0], r.origin_xy[1]))
}

/// Writes `<class>/<slide_id>_<x>_<y>.png` for every tile plus a JSON-lines
/// manifest sorted by (slide_id, y, x).
pub fn export_dataset(tiles: &[Tile], out_dir: &Path, overwrite: bool) -> Result<PathBuf> {
    let manifest = out_dir.join(MANIFEST_NAME);
    if manifest.exists() && !overwrite {
        return Err(Error::ManifestExists(manifest));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut order: Vec<&Tile> = tiles.iter().collect();
    order.sort_by(|a, b| {
        (&a.record.slide_id, a.record.origin_xy[1], a.record.origin_xy[0])
            .cmp(&(&b.record.slide_id, b.record.origin_xy[1], b.record.origin_xy[0]))
    });
    for class in order.iter().map(|t| &t.record.class_label).collect::<BTreeSet<_>>() {
        std::fs::create_dir_all(out_dir.join(class))?;
    }
    use rayon::prelude::*;
    order
        .par_iter()
        .map(|t| t.image.save(out_dir.join(tile_path(&t.record))).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    let mut w = BufWriter::new(std::fs::File::create(&manifest)?);
    for t in order {
        serde_json::to_writer(&mut w, &t.record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Vec<TileRecord>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Loads an exported dataset; classes are the sorted distinct labels.
pub fn load_tile_dataset(dir: &Path) -> Result<(TileSet, Vec<TileRecord>)> {
    let records = read_manifest(&dir.join(MANIFEST_NAME))?;
    let classes: Vec<String> = records.iter().map(|r| r.class_label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    use rayon::prelude::*;
    let images = records
        .par_iter()
        .map(|r| Ok(image::open(dir.join(tile_path(r)))?.to_rgb8()))
        .collect::<Result<Vec<_>>>()?;
    let mut set = TileSet::new(classes.clone());
    for (r, img) in records.iter().zip(images) {
        let label = classes.binary_search(&r.class_label).expect("label collected above");
        set.push(tile_path(r).to_string_lossy().into_owned(), img, label);
    }
    Ok((set, records))
}
