//! Georeferenced raster model shared by every raster-consuming stage.
//!
//! Grids are north-up with square pixels in a projected, metric frame. The
//! top-left corner of the grid sits at `(origin_x, origin_y)`; row indices
//! grow southwards and column indices grow eastwards.
//!
//! Every band stores 32-bit floats and marks invalid cells with a per-band
//! sentinel rather than NaN, so band files compare bit-for-bit across
//! platforms.

mod bundle;

pub use bundle::{read_bundle, read_bundle_header, write_bundle, BandHeader, BundleHeader, FORMAT_VERSION, HEADER_FILE};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodata sentinel used when none is specified.
pub const DEFAULT_NODATA: f32 = -9999.0;

/// Placement and size of a raster in a projected coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub epsg: u32,
}

impl GridGeometry {
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
        epsg: u32,
    ) -> Result<Self> {
        let geometry = GridGeometry {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
            epsg,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "grid dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(Error::Validation(format!(
                "pixel_size must be positive, got {}",
                self.pixel_size
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::Validation("grid origin must be finite".into()));
        }
        if is_geographic_epsg(self.epsg) {
            return Err(Error::Validation(format!(
                "EPSG:{} is a geographic frame; rasters must use projected meters",
                self.epsg
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Map coordinates of the center of cell `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> Result<(f64, f64)> {
        if row >= self.height || col >= self.width {
            return Err(Error::OutOfBounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(self.center_unchecked(row, col))
    }

    #[inline]
    pub(crate) fn center_x(&self, col: usize) -> f64 {
        self.origin_x + (col as f64 + 0.5) * self.pixel_size
    }

    #[inline]
    pub(crate) fn center_y(&self, row: usize) -> f64 {
        self.origin_y - (row as f64 + 0.5) * self.pixel_size
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, row: usize, col: usize) -> (f64, f64) {
        (self.center_x(col), self.center_y(row))
    }

    /// Cell whose footprint contains the map point, if any. Footprints are
    /// closed on the west/north edges and open on the east/south edges.
    pub fn cell_containing(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin_x) / self.pixel_size;
        let fy = (self.origin_y - y) / self.pixel_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (col, row) = (fx.floor() as usize, fy.floor() as usize);
        (col < self.width && row < self.height).then_some((row, col))
    }

    /// `(x_min, y_min, x_max, y_max)` of the full grid footprint.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y,
        )
    }

    pub fn ensure_same(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {}x{} @ ({}, {}) / {} m vs {}x{} @ ({}, {}) / {} m",
                self.width,
                self.height,
                self.origin_x,
                self.origin_y,
                self.pixel_size,
                other.width,
                other.height,
                other.origin_x,
                other.origin_y,
                other.pixel_size
            )))
        }
    }
}

fn is_geographic_epsg(epsg: u32) -> bool {
    // 4xxx codes are geographic 2D/3D frames (WGS84 = 4326, NAD83 = 4269, ...).
    (4000..5000).contains(&epsg)
}

/// One named layer of a [`RasterGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub nodata: f32,
    /// Resolution the band was acquired at; cell data is always stored at
    /// the grid's resolution.
    pub native_pixel_size: f64,
    pub data: Vec<f32>,
}

impl Band {
    pub fn new(name: impl Into<String>, nodata: f32, native_pixel_size: f64, data: Vec<f32>) -> Self {
        Band {
            name: name.into(),
            nodata,
            native_pixel_size,
            data,
        }
    }

    #[inline]
    pub fn is_nodata(&self, i: usize) -> bool {
        self.data[i] == self.nodata
    }

    #[inline]
    pub fn value(&self, i: usize) -> Option<f32> {
        (!self.is_nodata(i)).then(|| self.data[i])
    }

    pub fn valid_count(&self) -> usize {
        (0..self.data.len()).filter(|&i| !self.is_nodata(i)).count()
    }
}

pub(crate) fn validate_band_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("invalid band name `{name}`")))
    }
}

/// Multi-band raster on a single grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    geometry: GridGeometry,
    bands: Vec<Band>,
}

impl RasterGrid {
    pub fn new(geometry: GridGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(RasterGrid {
            geometry,
            bands: Vec::new(),
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band_names(&self) -> impl Iterator<Item = &str> {
        self.bands.iter().map(|b| b.name.as_str())
    }

    pub fn band(&self, name: &str) -> Result<&Band> {
        self.bands
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::MissingBand(name.to_string()))
    }

    pub fn has_band(&self, name: &str) -> bool {
        self.bands.iter().any(|b| b.name == name)
    }

    pub(crate) fn bands_mut(&mut self) -> &mut [Band] {
        &mut self.bands
    }

    /// Adds a band, replacing any existing band of the same name.
    pub fn add_band(&mut self, band: Band) -> Result<()> {
        validate_band_name(&band.name)?;
        if band.data.len() != self.geometry.len() {
            return Err(Error::Validation(format!(
                "band `{}` has {} cells, grid needs {}",
                band.name,
                band.data.len(),
                self.geometry.len()
            )));
        }
        if !band.nodata.is_finite() {
            return Err(Error::Validation(format!(
                "band `{}` nodata sentinel must be finite",
                band.name
            )));
        }
        if !(band.native_pixel_size.is_finite() && band.native_pixel_size > 0.0) {
            return Err(Error::Validation(format!(
                "band `{}` native pixel size must be positive",
                band.name
            )));
        }
        if let Some(pos) = band.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "band `{}` holds a non-finite value at cell {pos}",
                band.name
            )));
        }
        match self.bands.iter_mut().find(|b| b.name == band.name) {
            Some(slot) => *slot = band,
            None => self.bands.push(band),
        }
        Ok(())
    }

    /// Brings a coarse-resolution layer onto this grid by nearest-neighbour
    /// upsampling and stores it with its native resolution recorded.
    pub fn insert_coarse_band(
        &mut self,
        name: impl Into<String>,
        coarse: &GridGeometry,
        values: &[f32],
        nodata: f32,
    ) -> Result<()> {
        let data = upsample_nearest(coarse, values, nodata, &self.geometry)?;
        self.add_band(Band::new(name, nodata, coarse.pixel_size, data))
    }
}

/// A raster acquisition: grid plus acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: RasterGrid,
    pub date: NaiveDate,
    pub cloud_fraction: f64,
}

impl Scene {
    pub fn new(grid: RasterGrid, date: NaiveDate, cloud_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&cloud_fraction) {
            return Err(Error::Validation(format!(
                "cloud_fraction {cloud_fraction} outside [0, 1]"
            )));
        }
        Ok(Scene {
            grid,
            date,
            cloud_fraction,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.grid.geometry()
    }
}

/// Three-valued raster: `Some(true)`, `Some(false)` or `None` (nodata).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: GridGeometry,
    cells: Vec<Option<bool>>,
}

impl BinaryMask {
    pub fn new(geometry: GridGeometry, cells: Vec<Option<bool>>) -> Result<Self> {
        geometry.validate()?;
        if cells.len() != geometry.len() {
            return Err(Error::Validation(format!(
                "mask has {} cells, grid needs {}",
                cells.len(),
                geometry.len()
            )));
        }
        Ok(BinaryMask { geometry, cells })
    }

    pub fn filled(geometry: GridGeometry, value: Option<bool>) -> Result<Self> {
        Self::new(geometry, vec![value; geometry.len()])
    }

    /// Classifies each valid cell of `band` with `predicate`; nodata stays nodata.
    pub fn from_band(geometry: GridGeometry, band: &Band, predicate: impl Fn(f32) -> bool + Sync) -> Result<Self> {
        if band.data.len() != geometry.len() {
            return Err(Error::GeometryMismatch(format!(
                "band `{}` does not match mask geometry",
                band.name
            )));
        }
        let cells = (0..band.data.len())
            .into_par_iter()
            .map(|i| band.value(i).map(&predicate))
            .collect();
        Self::new(geometry, cells)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn cells(&self) -> &[Option<bool>] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<bool> {
        self.cells[self.geometry.index(row, col)]
    }

    /// Value at the cell containing a map point; `Err` when the point lies
    /// outside the mask.
    pub fn at_point(&self, x: f64, y: f64) -> Result<Option<bool>, (f64, f64)> {
        match self.geometry.cell_containing(x, y) {
            Some((r, c)) => Ok(self.get(r, c)),
            None => Err((x, y)),
        }
    }

    pub fn count_true(&self) -> usize {
        self.cells.iter().filter(|c| **c == Some(true)).count()
    }

    pub fn count_valid(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Encodes the mask as a single-band raster: 1 = true, 0 = false.
    pub fn to_grid(&self, band_name: &str) -> Result<RasterGrid> {
        let mut grid = RasterGrid::new(self.geometry)?;
        let data = self
            .cells
            .iter()
            .map(|c| match c {
                Some(true) => 1.0,
                Some(false) => 0.0,
                None => DEFAULT_NODATA,
            })
            .collect();
        grid.add_band(Band::new(band_name, DEFAULT_NODATA, self.geometry.pixel_size, data))?;
        Ok(grid)
    }

    /// Inverse of [`BinaryMask::to_grid`]: non-zero valid cells are true.
    pub fn from_grid(grid: &RasterGrid, band_name: &str) -> Result<Self> {
        let band = grid.band(band_name)?;
        Self::from_band(*grid.geometry(), band, |v| v != 0.0)
    }
}

/// Nearest-neighbour resampling of a coarse layer onto a finer grid sharing
/// its origin. Each fine cell copies the coarse cell containing its centre;
/// fine cells beyond the coarse footprint become `nodata`.
pub fn upsample_nearest(
    coarse: &GridGeometry,
    values: &[f32],
    nodata: f32,
    target: &GridGeometry,
) -> Result<Vec<f32>> {
    coarse.validate()?;
    if values.len() != coarse.len() {
        return Err(Error::Validation(format!(
            "coarse layer has {} cells, geometry needs {}",
            values.len(),
            coarse.len()
        )));
    }
    let ratio_f = coarse.pixel_size / target.pixel_size;
    let ratio = ratio_f.round();
    if ratio < 1.0 || (ratio_f - ratio).abs() > 1e-9 * ratio_f {
        return Err(Error::Validation(format!(
            "resolution ratio {ratio_f} is not a positive integer"
        )));
    }
    let tol = 1e-6 * target.pixel_size;
    if (coarse.origin_x - target.origin_x).abs() > tol || (coarse.origin_y - target.origin_y).abs() > tol {
        return Err(Error::GeometryMismatch(format!(
            "coarse origin ({}, {}) differs from target origin ({}, {})",
            coarse.origin_x, coarse.origin_y, target.origin_x, target.origin_y
        )));
    }
    let ratio = ratio as usize;
    let mut out = vec![nodata; target.len()];
    out.par_chunks_mut(target.width)
        .enumerate()
        .for_each(|(row, line)| {
            // The centre of fine cell k lies in coarse cell floor((k + 0.5) / ratio) = k / ratio.
            let crow = row / ratio;
            if crow >= coarse.height {
                return;
            }
            for (col, cell) in line.iter_mut().enumerate() {
                let ccol = col / ratio;
                if ccol < coarse.width {
                    *cell = values[coarse.index(crow, ccol)];
                }
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(w: usize, h: usize, ps: f64) -> GridGeometry {
        GridGeometry::new(w, h, 0.0, 100.0, ps, 32643).unwrap()
    }

    #[test]
    fn pixel_center_formula() {
        let g = geom(10, 10, 10.0);
        assert_eq!(g.pixel_center(0, 0).unwrap(), (5.0, 95.0));
        assert_eq!(g.pixel_center(9, 0).unwrap(), (5.0, 5.0));
        assert!(matches!(g.pixel_center(10, 0), Err(Error::OutOfBounds { .. })));
        assert!(g.pixel_center(0, 10).is_err());
    }

    #[test]
    fn cell_containing_inverts_pixel_center() {
        let g = GridGeometry::new(37, 23, 512_345.5, 3_401_000.25, 10.0, 32643).unwrap();
        let mut state = 0x2545f491u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let row = (state >> 33) as usize % g.height;
            let col = (state >> 13) as usize % g.width;
            let (x, y) = g.pixel_center(row, col).unwrap();
            assert_eq!(g.cell_containing(x, y), Some((row, col)));
        }
        let (x0, y0, x1, y1) = g.extent();
        assert_eq!(g.cell_containing(x0 - 0.1, y1 - 1.0), None);
        assert_eq!(g.cell_containing(x1, y1 - 1.0), None);
        assert_eq!(g.cell_containing(x0 + 1.0, y0), None);
    }

    #[test]
    fn geometry_rejects_bad_values() {
        assert!(GridGeometry::new(0, 1, 0.0, 0.0, 10.0, 32643).is_err());
        assert!(GridGeometry::new(1, 1, 0.0, 0.0, 0.0, 32643).is_err());
        assert!(GridGeometry::new(1, 1, 0.0, 0.0, 10.0, 4326).is_err());
    }

    #[test]
    fn add_band_rejects_nan_and_bad_length() {
        let mut grid = RasterGrid::new(geom(2, 2, 10.0)).unwrap();
        assert!(grid.add_band(Band::new("A", DEFAULT_NODATA, 10.0, vec![1.0; 3])).is_err());
        assert!(grid
            .add_band(Band::new("A", DEFAULT_NODATA, 10.0, vec![1.0, f32::NAN, 0.0, 0.0]))
            .is_err());
        assert!(grid.add_band(Band::new("../x", DEFAULT_NODATA, 10.0, vec![0.0; 4])).is_err());
        grid.add_band(Band::new("A", DEFAULT_NODATA, 10.0, vec![0.0; 4])).unwrap();
        assert!(grid.band("B").is_err());
    }

    #[test]
    fn upsample_single_cell() {
        let coarse = geom(1, 1, 20.0);
        let fine = geom(2, 2, 10.0);
        assert_eq!(upsample_nearest(&coarse, &[7.0], DEFAULT_NODATA, &fine).unwrap(), vec![7.0; 4]);
    }

    #[test]
    fn upsample_propagates_nodata() {
        let coarse = geom(2, 1, 20.0);
        let fine = geom(4, 2, 10.0);
        let out = upsample_nearest(&coarse, &[DEFAULT_NODATA, 3.0], DEFAULT_NODATA, &fine).unwrap();
        assert_eq!(
            out,
            vec![DEFAULT_NODATA, DEFAULT_NODATA, 3.0, 3.0, DEFAULT_NODATA, DEFAULT_NODATA, 3.0, 3.0]
        );
    }

    #[test]
    fn upsample_ratio_three_matches_center_oracle() {
        let coarse = geom(2, 2, 30.0);
        let fine = geom(6, 6, 10.0);
        let values = [1.0, 2.0, 3.0, 4.0];
        let out = upsample_nearest(&coarse, &values, DEFAULT_NODATA, &fine).unwrap();
        // Oracle: locate every fine-cell centre in the coarse grid by coordinates.
        for row in 0..6 {
            for col in 0..6 {
                let (x, y) = fine.pixel_center(row, col).unwrap();
                let (cr, cc) = coarse.cell_containing(x, y).unwrap();
                assert_eq!(out[fine.index(row, col)], values[coarse.index(cr, cc)]);
            }
        }
        assert_eq!(&out[0..6], &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn upsample_rejects_bad_ratio_and_origin() {
        let fine = geom(4, 4, 10.0);
        assert!(upsample_nearest(&geom(2, 2, 15.0), &[0.0; 4], DEFAULT_NODATA, &fine).is_err());
        let shifted = GridGeometry::new(2, 2, 5.0, 100.0, 20.0, 32643).unwrap();
        assert!(matches!(
            upsample_nearest(&shifted, &[0.0; 4], DEFAULT_NODATA, &fine),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn mask_grid_round_trip() {
        let g = geom(3, 1, 10.0);
        let mask = BinaryMask::new(g, vec![Some(true), None, Some(false)]).unwrap();
        let grid = mask.to_grid("burned").unwrap();
        assert_eq!(BinaryMask::from_grid(&grid, "burned").unwrap(), mask);
    }

    #[test]
    fn scene_rejects_cloud_fraction_out_of_range() {
        let grid = RasterGrid::new(geom(1, 1, 10.0)).unwrap();
        let date = NaiveDate::from_ymd_opt(2021, 9, 1).unwrap();
        assert!(Scene::new(grid.clone(), date, 1.5).is_err());
        assert!(Scene::new(grid, date, 1.0).is_ok());
    }
}
