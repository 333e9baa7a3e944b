//! Directory-based raster interchange.
//!
//! A bundle is a directory holding `header.json` plus one `<band>.f32` file
//! per band. Band files are raw little-endian `f32`, row-major, top row first.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{validate_band_name, Band, GridGeometry, RasterGrid, Scene};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "header.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandHeader {
    pub name: String,
    pub nodata: f32,
    pub pixel_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub format_version: u32,
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub epsg: u32,
    pub date: NaiveDate,
    pub cloud_fraction: f64,
    pub bands: Vec<BandHeader>,
}

impl BundleHeader {
    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(
            self.width,
            self.height,
            self.origin_x,
            self.origin_y,
            self.pixel_size,
            self.epsg,
        )
    }

    fn validate(&self) -> Result<GridGeometry> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::format(
                "bundle header",
                format!("unsupported format_version {}", self.format_version),
            ));
        }
        let geometry = self.geometry()?;
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            return Err(Error::Validation(format!(
                "cloud_fraction {} outside [0, 1]",
                self.cloud_fraction
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for band in &self.bands {
            validate_band_name(&band.name)?;
            if !seen.insert(band.name.as_str()) {
                return Err(Error::Validation(format!("duplicate band `{}`", band.name)));
            }
            if !band.nodata.is_finite() {
                return Err(Error::Validation(format!("band `{}` has a non-finite nodata", band.name)));
            }
            let ratio = band.pixel_size / geometry.pixel_size;
            if !(ratio >= 1.0 && (ratio - ratio.round()).abs() <= 1e-9 * ratio) {
                return Err(Error::Validation(format!(
                    "band `{}` native pixel size {} is not an integer multiple of {}",
                    band.name, band.pixel_size, geometry.pixel_size
                )));
            }
        }
        Ok(geometry)
    }
}

/// Reads only the header of a bundle.
pub fn read_bundle_header(dir: &Path) -> Result<BundleHeader> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: BundleHeader = serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    header.validate()?;
    Ok(header)
}

pub fn read_bundle(dir: &Path) -> Result<Scene> {
    let header = read_bundle_header(dir)?;
    let geometry = header.validate()?;
    let expected = 4 * geometry.len() as u64;
    let mut grid = RasterGrid::new(geometry)?;
    for bh in &header.bands {
        let path = dir.join(format!("{}.f32", bh.name));
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let size = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if size != expected {
            return Err(Error::format(
                path.display().to_string(),
                format!("expected {expected} bytes, found {size}"),
            ));
        }
        let mut bytes = Vec::with_capacity(expected as usize);
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&path, e))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                path.display().to_string(),
                format!("non-finite value at cell {pos}"),
            ));
        }
        grid.add_band(Band::new(bh.name.clone(), bh.nodata, bh.pixel_size, data))?;
    }
    Scene::new(grid, header.date, header.cloud_fraction)
}

pub fn write_bundle(scene: &Scene, dir: &Path) -> Result<()> {
    let g = scene.geometry();
    let header = BundleHeader {
        format_version: FORMAT_VERSION,
        width: g.width,
        height: g.height,
        origin_x: g.origin_x,
        origin_y: g.origin_y,
        pixel_size: g.pixel_size,
        epsg: g.epsg,
        date: scene.date,
        cloud_fraction: scene.cloud_fraction,
        bands: scene
            .grid
            .bands()
            .iter()
            .map(|b| BandHeader {
                name: b.name.clone(),
                nodata: b.nodata,
                pixel_size: b.native_pixel_size,
            })
            .collect(),
    };
    header.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header_path = dir.join(HEADER_FILE);
    let mut text = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::format("bundle header", e.to_string()))?;
    text.push('\n');
    fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
    for band in scene.grid.bands() {
        let path = dir.join(format!("{}.f32", band.name));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for v in &band.data {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DEFAULT_NODATA;
    use proptest::prelude::*;

    fn small_scene(values: Vec<f32>, w: usize, h: usize) -> Scene {
        let g = GridGeometry::new(w, h, 500_000.0, 3_400_000.0, 10.0, 32643).unwrap();
        let mut grid = RasterGrid::new(g).unwrap();
        grid.add_band(Band::new("RED", DEFAULT_NODATA, 10.0, values)).unwrap();
        Scene::new(grid, NaiveDate::from_ymd_opt(2021, 9, 14).unwrap(), 0.05).unwrap()
    }

    #[test]
    fn two_by_two_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = small_scene(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        write_bundle(&scene, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.grid.band("RED").unwrap().data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(back, scene);
    }

    #[test]
    fn one_cell_band_file_is_four_bytes() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&small_scene(vec![DEFAULT_NODATA], 1, 1), dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join("RED.f32")).unwrap().len(), 4);
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.grid.band("RED").unwrap().data[0].to_bits(), DEFAULT_NODATA.to_bits());
    }

    #[test]
    fn truncated_band_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&small_scene(vec![1.0, 2.0, 3.0, 4.0], 2, 2), dir.path()).unwrap();
        let path = dir.path().join("RED.f32");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..12]).unwrap();
        let err = read_bundle(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Io { .. })));

        write_bundle(&small_scene(vec![1.0, 2.0, 3.0, 4.0], 2, 2), dir.path()).unwrap();
        let hp = dir.path().join(HEADER_FILE);
        let text = fs::read_to_string(&hp).unwrap();

        fs::write(&hp, text.replace("\"pixel_size\": 10.0,\n  \"epsg\"", "\"pixel_size\": 0.0,\n  \"epsg\"")).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Validation(_))));

        fs::write(&hp, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_cells_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&small_scene(vec![1.0, 2.0, 3.0, 4.0], 2, 2), dir.path()).unwrap();
        let path = dir.path().join("RED.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(read_bundle(dir.path()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(
            w in 1usize..9,
            h in 1usize..9,
            seed in any::<u64>(),
            ox in -1e6f64..1e6,
            cloud in 0.0f64..=1.0,
            nodata_every in 2usize..7,
        ) {
            let mut state = seed | 1;
            let values: Vec<f32> = (0..w * h)
                .map(|i| {
                    state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                    if i % nodata_every == 0 { DEFAULT_NODATA } else { (state >> 40) as f32 / 1e5 - 50.0 }
                })
                .collect();
            let g = GridGeometry::new(w, h, ox, 3_400_000.125, 10.0, 32643).unwrap();
            let mut grid = RasterGrid::new(g).unwrap();
            grid.add_band(Band::new("B1", DEFAULT_NODATA, 20.0, values.clone())).unwrap();
            grid.add_band(Band::new("B2", -1.5, 10.0, values.iter().rev().copied().collect())).unwrap();
            let scene = Scene::new(grid, NaiveDate::from_ymd_opt(2021, 10, 3).unwrap(), cloud).unwrap();
            let dir = tempfile::tempdir().unwrap();
            write_bundle(&scene, dir.path()).unwrap();
            let back = read_bundle(dir.path()).unwrap();
            for (a, b) in scene.grid.bands().iter().zip(back.grid.bands()) {
                prop_assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                                b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
            prop_assert_eq!(back, scene);
        }
    }
}
