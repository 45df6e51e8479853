use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_FOVS: [f64; 4] = [410.0, 600.0, 800.0, 1400.0];

/// Closed polygon in base-level pixel coordinates; the closing edge is implicit.
pub type Polygon = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideManifest {
    pub slide_id: String,
    /// `Normal`, `HP`, `SSLe`, `TA`, `TVA` or any other label.
    pub class_label: String,
    pub mpp: f64,
    #[serde(default = "unit_levels")]
    pub level_downsamples: Vec<f64>,
    #[serde(default)]
    pub roi_polygons: Vec<Polygon>,
    pub image_source: PathBuf,
}

fn unit_levels() -> Vec<f64> {
    vec![1.0]
}

pub fn is_normal(label: &str) -> bool {
    label.eq_ignore_ascii_case("normal")
}

impl SlideManifest {
    pub fn validate(&self) -> Result<()> {
        if !(self.mpp > 0.0 && self.mpp.is_finite()) {
            return Err(Error::InvalidManifest(format!("{}: mpp must be positive, got {}", self.slide_id, self.mpp)));
        }
        let levels = &self.level_downsamples;
        if levels.first() != Some(&1.0) || levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidManifest(format!(
                "{}: level_downsamples must start at 1 and increase strictly, got {levels:?}",
                self.slide_id
            )));
        }
        for p in &self.roi_polygons {
            super::geometry::validate_polygon(p)?;
        }
        Ok(())
    }

    pub fn is_normal(&self) -> bool {
        is_normal(&self.class_label)
    }
}

/// Reads a JSON array of slide manifests (or a single object). Relative
/// `image_source` paths resolve against the manifest's directory.
pub fn load_manifests(path: &Path) -> Result<Vec<SlideManifest>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let mut slides: Vec<SlideManifest> = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value)?,
        other => vec![serde_json::from_value(other)?],
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for s in &mut slides {
        if s.image_source.is_relative() {
            s.image_source = base.join(&s.image_source);
        }
        s.validate()?;
    }
    Ok(slides)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMembership {
    InRoi,
    OutRoi,
    NormalSlide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub slide_id: String,
    pub origin_xy: [u64; 2],
    pub fov_microns: f64,
    pub side_px: u64,
    pub class_label: String,
    pub roi_membership: RoiMembership,
    pub tissue_score: f64,
}

/// Tile side in base-level pixels for a field of view.
pub fn side_px(fov_microns: f64, mpp: f64) -> Result<u64> {
    let px = fov_microns / mpp;
    if !(px >= 1.0) || !px.is_finite() {
        return Err(Error::FovTooSmall { fov_microns, mpp });
    }
    Ok(px.round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slide() -> SlideManifest {
        SlideManifest {
            slide_id: "s1".into(),
            class_label: "HP".into(),
            mpp: 0.4,
            level_downsamples: vec![1.0, 4.0, 16.0],
            roi_polygons: vec![vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]],
            image_source: "s1.png".into(),
        }
    }

    #[test]
    fn side_px_arithmetic() {
        assert_eq!(side_px(410.0, 0.4).unwrap(), 1025);
        assert_eq!(side_px(1400.0, 0.4).unwrap(), 3500);
        assert_eq!(side_px(800.0, 0.4).unwrap(), 2000);
        assert!(matches!(side_px(0.3, 0.4), Err(Error::FovTooSmall { .. })));
    }

    #[test]
    fn manifest_validation() {
        assert!(slide().validate().is_ok());
        let mut s = slide();
        s.mpp = 0.0;
        assert!(s.validate().is_err());
        let mut s = slide();
        s.level_downsamples = vec![1.0, 4.0, 4.0];
        assert!(s.validate().is_err());
        let mut s = slide();
        s.roi_polygons = vec![vec![[0.0, 0.0], [1.0, 1.0]]];
        assert!(s.validate().is_err());
    }

    #[test]
    fn manifest_json_uses_point_lists() {
        let text = serde_json::to_string(&slide()).unwrap();
        assert!(text.contains("[[0.0,0.0],[10.0,0.0],[10.0,10.0]]"));
        let back: SlideManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, slide());
    }
}
