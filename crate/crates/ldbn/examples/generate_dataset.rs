//! Render a shifted scenario into a dataset file, reload it, and print what
//! came back. The on-disk layout is the LDDS container: header, then raw
//! f32 frames with i16 cell labels.

use ldbn::scenario::{Dataset, ScenarioSpec, ShiftProfile};

fn main() -> ldbn::Result<()> {
    let spec = ScenarioSpec::shifted(ShiftProfile::Night, 42);
    let path = std::env::temp_dir().join("ldbn_example_night.ldds");

    ldbn::scenario::generate_to_file(&spec, 32, &path)?;
    let ds = Dataset::load(&path)?;

    println!("wrote and reloaded {} frames from {}", ds.len(), path.display());
    println!(
        "frame geometry: {}x{} px, {} lanes, {} anchor rows",
        ds.spec.width,
        ds.spec.height,
        ds.spec.lanes,
        ds.spec.grid()?.anchors()
    );

    // Labels are grid-cell indices per (anchor row, lane); -1 marks a lane
    // that left the image at that row.
    let grid = ds.spec.grid()?;
    let (image, labels) = ds.batch(&[0])?;
    let mean: f32 = image.data().iter().sum::<f32>() / image.len() as f32;
    println!("frame 0 mean intensity {mean:.3}");
    for lane in 0..grid.lanes {
        let cells: Vec<i16> = (0..grid.anchors())
            .map(|a| labels[0].cell(a, lane, &grid))
            .collect();
        println!("frame 0 cells, lane {lane}: {cells:?}");
    }
    Ok(())
}
