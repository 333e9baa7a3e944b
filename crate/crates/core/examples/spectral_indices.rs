//! Masks a small reflectance scene and computes NBR, BAI and BAIS2.
//!
//! ```text
//! cargo run --example spectral_indices
//! ```

use chrono::NaiveDate;
use residue_burn::raster::{Band, BinaryMask, GridGeometry, RasterGrid, Scene, DEFAULT_NODATA};
use residue_burn::spectral::{apply_masks, bai, bais2, compute_index_kind, nbr, BandNames, IndexKind, QaBits};

fn main() -> residue_burn::Result<()> {
    // Scalar formulas; `None` marks a zero denominator.
    let show = |v: Option<f64>| v.map_or("nodata".to_string(), |v| format!("{v:.4}"));
    println!("NBR(0.6, 0.2)   = {}", show(nbr(0.6, 0.2)));
    println!("BAI(0.2, 0.16)  = {}", show(bai(0.2, 0.16)));
    println!("BAIS2(0.3, 0.1) = {}", show(bais2(0.3, 0.1)));
    println!("NBR(0, 0)       = {}", show(nbr(0.0, 0.0)));

    // A 4x2 scene: one cloudy pixel (QA bit 10), one water pixel, one urban pixel.
    let g = GridGeometry::new(4, 2, 500_000.0, 3_400_000.0, 10.0, 32643)?;
    let mut grid = RasterGrid::new(g)?;
    let bands: [(&str, [f32; 8]); 5] = [
        ("RED", [0.05, 0.08, 0.12, 0.10, 0.06, 0.20, 0.07, 0.09]),
        ("NIR", [0.40, 0.35, 0.18, 0.22, 0.45, 0.25, 0.38, 0.30]),
        ("SWIR", [0.20, 0.22, 0.30, 0.28, 0.18, 0.30, 0.21, 0.25]),
        ("SWIR2", [0.10, 0.15, 0.28, 0.25, 0.08, 0.30, 0.12, 0.20]),
        ("QA60", [0.0, 1024.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
    ];
    for (name, data) in bands {
        grid.add_band(Band::new(name, DEFAULT_NODATA, 10.0, data.to_vec()))?;
    }
    let scene = Scene::new(grid, NaiveDate::from_ymd_opt(2021, 10, 12).unwrap(), 0.05)?;

    let mut water = vec![Some(false); 8];
    water[4] = Some(true);
    let mut urban = vec![Some(false); 8];
    urban[5] = Some(true);
    let masked = apply_masks(
        &scene,
        scene.grid.band("QA60")?,
        QaBits::default(),
        &BinaryMask::new(g, water)?,
        &BinaryMask::new(g, urban)?,
    )?;

    let names = BandNames::default();
    for kind in IndexKind::ALL {
        let index = compute_index_kind(&masked.grid, &names, kind)?;
        let cells: Vec<String> = (0..g.len())
            .map(|i| index.get(i).map_or("   --  ".into(), |v| format!("{v:7.3}")))
            .collect();
        println!("{:>5}: {}", kind.name(), cells.join(" "));
        let s = index.summary();
        println!("       valid {} mean {:?}", s.valid, s.mean);
    }
    Ok(())
}
