//! Render day, night and occlusion scenes and write a dataset file.
//!
//! cargo run --release --example generate_scenes -- [OUT_DIR] [COUNT]

use std::path::PathBuf;

use mm2d3d::scene::{generate, load, save, SceneSpec, CLASS_NAMES};

fn main() -> mm2d3d::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/scenes".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    for (name, spec) in [("day", SceneSpec::day(1)), ("night", SceneSpec::night(1)), ("occlusion", SceneSpec::occlusion(1))] {
        let ds = generate(&spec, count)?;
        let mut hist = [0usize; 4];
        let mut brightness = 0.0;
        for s in &ds.samples {
            for &l in s.labels().unwrap_or(&[]) {
                hist[l as usize] += 1;
            }
            brightness += s.image.data().iter().sum::<f32>() / s.image.len() as f32;
        }
        let path = out.join(format!("{name}.mm23"));
        save(&ds, &path)?;
        assert_eq!(load(&path)?, ds);
        println!("{name:<10} mean intensity {:.3}  -> {}", brightness / count as f32, path.display());
        for (c, n) in CLASS_NAMES.iter().zip(hist) {
            println!("    {c:<11} {n}");
        }
    }
    Ok(())
}
