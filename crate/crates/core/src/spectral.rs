//! Burn-sensitive spectral indices, scene masking and weekly compositing.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Band, BinaryMask, GridGeometry, RasterGrid, Scene, DEFAULT_NODATA};

/// Reflectances outside this closed range are treated as nodata.
pub const REFLECTANCE_RANGE: (f32, f32) = (-0.1, 1.5);

/// BUFRAC values strictly above this mark a cell as urban.
pub const URBAN_BUFRAC_THRESHOLD: f32 = 50.0;

/// Names of the scene bands the index formulas read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandNames {
    pub red: String,
    pub nir: String,
    pub swir: String,
    pub swir2: String,
    pub qa: String,
}

impl Default for BandNames {
    fn default() -> Self {
        BandNames {
            red: "RED".into(),
            nir: "NIR".into(),
            swir: "SWIR".into(),
            swir2: "SWIR2".into(),
            qa: "QA60".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IndexKind {
    #[serde(rename = "NBR")]
    Nbr,
    #[serde(rename = "BAI")]
    Bai,
    #[serde(rename = "BAIS2")]
    Bais2,
}

impl IndexKind {
    pub const ALL: [IndexKind; 3] = [IndexKind::Nbr, IndexKind::Bai, IndexKind::Bais2];

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Nbr => "NBR",
            IndexKind::Bai => "BAI",
            IndexKind::Bais2 => "BAIS2",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalized burn ratio, `(NIR - SWIR) / (NIR + SWIR)`.
pub fn nbr(nir: f64, swir: f64) -> Option<f64> {
    normalized_difference(nir, swir)
}

/// Burned area index, `1 / ((RED - 0.1)^2 + (NIR - 0.06)^2)`.
pub fn bai(red: f64, nir: f64) -> Option<f64> {
    let d = (red - 0.1).powi(2) + (nir - 0.06).powi(2);
    (d > 0.0).then(|| 1.0 / d).filter(|v| v.is_finite())
}

/// Sentinel-2 burned area index in its two-band ratio form,
/// `(SWIR2 - RED) / (SWIR2 + RED)`.
pub fn bais2(swir2: f64, red: f64) -> Option<f64> {
    normalized_difference(swir2, red)
}

fn normalized_difference(a: f64, b: f64) -> Option<f64> {
    let sum = a + b;
    if sum == 0.0 {
        return None;
    }
    // Only reachable with negative reflectances; outside the index's domain.
    Some((a - b) / sum).filter(|v| (-1.0..=1.0).contains(v))
}

/// A single index layer on a scene grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRaster {
    pub geometry: GridGeometry,
    pub kind: IndexKind,
    pub nodata: f32,
    pub values: Vec<f32>,
}

impl IndexRaster {
    #[inline]
    pub fn get(&self, i: usize) -> Option<f32> {
        let v = self.values[i];
        (v != self.nodata).then_some(v)
    }

    pub fn to_band(&self) -> Band {
        Band::new(self.kind.name(), self.nodata, self.geometry.pixel_size, self.values.clone())
    }

    /// Reads a stored index band back, e.g. from a composite bundle.
    pub fn from_grid(grid: &RasterGrid, kind: IndexKind) -> Result<Self> {
        let band = grid.band(kind.name())?;
        Ok(IndexRaster {
            geometry: *grid.geometry(),
            kind,
            nodata: band.nodata,
            values: band.data.clone(),
        })
    }

    pub fn summary(&self) -> IndexSummary {
        let mut valid: Vec<f32> = self.values.iter().copied().filter(|v| *v != self.nodata).collect();
        IndexSummary::from_values(self.kind, &mut valid)
    }
}

/// Distribution summary of one index layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSummary {
    pub kind: IndexKind,
    pub valid: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl IndexSummary {
    fn from_values(kind: IndexKind, values: &mut [f32]) -> Self {
        let n = values.len();
        if n == 0 {
            return IndexSummary {
                kind,
                valid: 0,
                min: None,
                max: None,
                mean: None,
                median: None,
            };
        }
        values.sort_unstable_by(f32::total_cmp);
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        IndexSummary {
            kind,
            valid: n,
            min: Some(values[0] as f64),
            max: Some(values[n - 1] as f64),
            mean: Some(mean),
            median: Some(sorted_median(values)),
        }
    }
}

fn reflectance(band: &Band, i: usize) -> Option<f32> {
    band.value(i)
        .filter(|v| (REFLECTANCE_RANGE.0..=REFLECTANCE_RANGE.1).contains(v))
}

fn compute_index(
    grid: &RasterGrid,
    kind: IndexKind,
    first: &str,
    second: &str,
    f: impl Fn(f32, f32) -> Option<f64> + Sync,
) -> Result<IndexRaster> {
    let a = grid.band(first)?;
    let b = grid.band(second)?;
    let geometry = *grid.geometry();
    let mut values = vec![DEFAULT_NODATA; geometry.len()];
    values
        .par_chunks_mut(geometry.width)
        .enumerate()
        .for_each(|(row, line)| {
            let base = row * geometry.width;
            for (k, out) in line.iter_mut().enumerate() {
                let i = base + k;
                if let (Some(x), Some(y)) = (reflectance(a, i), reflectance(b, i)) {
                    if let Some(v) = f(x, y) {
                        *out = v as f32;
                    }
                }
            }
        });
    Ok(IndexRaster {
        geometry,
        kind,
        nodata: DEFAULT_NODATA,
        values,
    })
}

pub fn compute_nbr(grid: &RasterGrid, names: &BandNames) -> Result<IndexRaster> {
    compute_index(grid, IndexKind::Nbr, &names.nir, &names.swir, |nir, swir| {
        nbr(nir.into(), swir.into())
    })
}

pub fn compute_bai(grid: &RasterGrid, names: &BandNames) -> Result<IndexRaster> {
    compute_index(grid, IndexKind::Bai, &names.red, &names.nir, |red, nir| {
        // The f32 images of the reference point are the singular cell.
        if red == 0.1f32 && nir == 0.06f32 {
            return None;
        }
        bai(red.into(), nir.into())
    })
}

pub fn compute_bais2(grid: &RasterGrid, names: &BandNames) -> Result<IndexRaster> {
    compute_index(grid, IndexKind::Bais2, &names.swir2, &names.red, |swir2, red| {
        bais2(swir2.into(), red.into())
    })
}

pub fn compute_index_kind(grid: &RasterGrid, names: &BandNames, kind: IndexKind) -> Result<IndexRaster> {
    match kind {
        IndexKind::Nbr => compute_nbr(grid, names),
        IndexKind::Bai => compute_bai(grid, names),
        IndexKind::Bais2 => compute_bais2(grid, names),
    }
}

/// Appends NBR, BAI and BAIS2 bands to a grid.
pub fn add_index_bands(grid: &mut RasterGrid, names: &BandNames) -> Result<()> {
    for kind in IndexKind::ALL {
        let index = compute_index_kind(grid, names, kind)?;
        grid.add_band(index.to_band())?;
    }
    Ok(())
}

/// Urban cells: built-up fraction strictly above 50.
pub fn build_urban_mask(bufrac: &RasterGrid, band: &str) -> Result<BinaryMask> {
    BinaryMask::from_band(*bufrac.geometry(), bufrac.band(band)?, |v| v > URBAN_BUFRAC_THRESHOLD)
}

/// Water cells from a maximum-water-extent layer (non-zero = water).
pub fn build_water_mask(extent: &RasterGrid, band: &str) -> Result<BinaryMask> {
    BinaryMask::from_band(*extent.geometry(), extent.band(band)?, |v| v > 0.0)
}

/// Bit positions of the cloud flags in the QA band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaBits {
    pub cloud: u8,
    pub cirrus: u8,
}

impl Default for QaBits {
    fn default() -> Self {
        QaBits { cloud: 10, cirrus: 11 }
    }
}

impl QaBits {
    pub fn is_cloudy(&self, qa: f32) -> bool {
        if !(0.0..=u32::MAX as f32).contains(&qa) {
            return false;
        }
        let bits = qa as u32;
        bits & ((1 << self.cloud) | (1 << self.cirrus)) != 0
    }
}

/// Blanks cloudy, cirrus, water and urban pixels in every band except the QA
/// band itself. Nodata cells of the QA band or of either mask carry no flag.
pub fn apply_masks(
    scene: &Scene,
    qa_band: &Band,
    qa_bits: QaBits,
    water_mask: &BinaryMask,
    urban_mask: &BinaryMask,
) -> Result<Scene> {
    let g = scene.geometry();
    g.ensure_same(water_mask.geometry(), "water mask")?;
    g.ensure_same(urban_mask.geometry(), "urban mask")?;
    if qa_band.data.len() != g.len() {
        return Err(Error::GeometryMismatch(format!(
            "QA band `{}` has {} cells, scene has {}",
            qa_band.name,
            qa_band.data.len(),
            g.len()
        )));
    }
    let blank: Vec<bool> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            qa_band.value(i).is_some_and(|q| qa_bits.is_cloudy(q))
                || water_mask.cells()[i] == Some(true)
                || urban_mask.cells()[i] == Some(true)
        })
        .collect();
    let mut out = scene.clone();
    for band in out.grid.bands_mut() {
        if band.name == qa_band.name {
            continue;
        }
        let nodata = band.nodata;
        band.data
            .par_iter_mut()
            .zip(blank.par_iter())
            .for_each(|(v, &b)| {
                if b {
                    *v = nodata;
                }
            });
    }
    Ok(out)
}

/// Cloud-cover filter; the bound is inclusive.
pub fn passes_cloud_filter(cloud_fraction: f64, max_cloud: f64) -> bool {
    cloud_fraction <= max_cloud
}

pub fn filter_scenes(stack: Vec<Scene>, max_cloud: f64) -> Vec<Scene> {
    stack
        .into_iter()
        .filter(|s| passes_cloud_filter(s.cloud_fraction, max_cloud))
        .collect()
}

/// ISO-8601 week of a given ISO year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IsoWeek {
    pub year: i32,
    pub week: u32,
}

impl IsoWeek {
    pub fn of(date: NaiveDate) -> Self {
        let w = date.iso_week();
        IsoWeek {
            year: w.year(),
            week: w.week(),
        }
    }

    /// Monday of the week.
    pub fn start(&self) -> Option<NaiveDate> {
        NaiveDate::from_isoywd_opt(self.year, self.week, chrono::Weekday::Mon)
    }
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyComposite {
    pub week: IsoWeek,
    pub grid: RasterGrid,
    /// Number of scenes acquired in the week.
    pub scene_count: usize,
}

/// Median of a sorted, non-empty slice; even lengths average the middle pair.
pub(crate) fn sorted_median(sorted: &[f32]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

/// Per-pixel, per-band median over the valid observations of one ISO week.
///
/// All scenes in `stack` must share geometry and band set; scenes from other
/// weeks are ignored. Pixels with no valid observation become nodata.
pub fn weekly_median_composite(stack: &[Scene], week: IsoWeek) -> Result<WeeklyComposite> {
    let first = stack
        .first()
        .ok_or_else(|| Error::Insufficient("cannot composite an empty scene stack".into()))?;
    let geometry = *first.geometry();
    let names: Vec<&str> = first.grid.band_names().collect();
    for s in &stack[1..] {
        geometry.ensure_same(s.geometry(), "composite stack")?;
        let other: Vec<&str> = s.grid.band_names().collect();
        if other.len() != names.len() || names.iter().any(|n| !s.grid.has_band(n)) {
            return Err(Error::GeometryMismatch(format!(
                "band sets differ within the stack: {names:?} vs {other:?}"
            )));
        }
    }
    let members: Vec<&Scene> = stack.iter().filter(|s| IsoWeek::of(s.date) == week).collect();

    let mut grid = RasterGrid::new(geometry)?;
    for (bi, name) in names.iter().enumerate() {
        let template = &first.grid.bands()[bi];
        let layers: Vec<&Band> = members
            .iter()
            .map(|s| s.grid.band(name))
            .collect::<Result<_>>()?;
        let mut data = vec![template.nodata; geometry.len()];
        data.par_chunks_mut(geometry.width)
            .enumerate()
            .for_each(|(row, line)| {
                let mut obs: Vec<f32> = Vec::with_capacity(layers.len());
                let base = row * geometry.width;
                for (k, out) in line.iter_mut().enumerate() {
                    obs.clear();
                    obs.extend(layers.iter().filter_map(|b| b.value(base + k)));
                    if !obs.is_empty() {
                        obs.sort_unstable_by(f32::total_cmp);
                        *out = sorted_median(&obs) as f32;
                    }
                }
            });
        grid.add_band(Band::new(*name, template.nodata, template.native_pixel_size, data))?;
    }
    Ok(WeeklyComposite {
        week,
        grid,
        scene_count: members.len(),
    })
}
