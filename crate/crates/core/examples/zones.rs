//! Builds village squares and plot rectangles from plot coordinates and
//! measures the burned share of a mask inside each.
//!
//! ```text
//! cargo run --example zones
//! ```

use residue_burn::raster::{BinaryMask, GridGeometry};
use residue_burn::zones::{
    plot_boxes, project_points, village_boxes, write_zones_wkt, zonal_counts, LocalProjection, PlotBoxParams,
    PlotsByVillage, VillageBoxParams,
};

fn main() -> residue_burn::Result<()> {
    let proj = LocalProjection::new(75.5, 30.5).with_offset(500_000.0, 3_400_000.0);
    let mut plots = PlotsByVillage::new();
    plots.insert(
        "V01".into(),
        project_points(&[(75.500, 30.500), (75.510, 30.505), (75.495, 30.490), (75.505, 30.495)], &proj)?,
    );
    // The last plot of V02 sits 60 km away and is dropped as an outlier.
    plots.insert(
        "V02".into(),
        project_points(&[(75.550, 30.520), (75.556, 30.526), (75.548, 30.515), (76.100, 30.520)], &proj)?,
    );

    let villages = village_boxes(&plots, &VillageBoxParams::default())?;
    println!(
        "mean plot distance {:.1} m, dropped {} plot(s)",
        villages.mean_distance, villages.dropped_plots
    );
    let plot_rects = plot_boxes(&villages.retained, &PlotBoxParams::default())?;

    // A mask whose western half is burned.
    let g = GridGeometry::new(800, 600, 498_000.0, 3_404_000.0, 10.0, 32643)?;
    let cells = (0..g.len()).map(|i| Some(i % g.width < 250)).collect();
    let mask = BinaryMask::new(g, cells)?;

    for z in villages.boxes.iter().chain(&plot_rects.boxes) {
        let counts = zonal_counts(&mask, z)?;
        println!(
            "{:<10} {:<3} {:8.0} x {:6.0} m  burned {:6}/{:6} = {:.3}",
            z.kind.as_str(),
            z.zone_id,
            z.width(),
            z.height(),
            counts.burned,
            counts.valid,
            counts.fraction().unwrap_or(f64::NAN)
        );
    }

    let dir = tempfile::tempdir().expect("temporary directory");
    let wkt = dir.path().join("village_boxes.wkt");
    write_zones_wkt(&wkt, &villages.boxes)?;
    let text = std::fs::read_to_string(&wkt).map_err(|source| residue_burn::Error::Io { path: wkt.clone(), source })?;
    print!("{text}");
    Ok(())
}
