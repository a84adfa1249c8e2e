//! Source-only training, cross-modal adaptation and a pseudo-label round on
//! the day -> night shift, with target evaluation after each.
//!
//! cargo run --release --example adapt_day_to_night -- [SAMPLES] [EPOCHS]

use mm2d3d::nets::Model;
use mm2d3d::scene::{generate, SceneSpec};
use mm2d3d::train::{evaluate, generate_pseudo_labels, train, PseudoSource, TrainConfig, UdaSection};

fn main() -> mm2d3d::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let source = generate(&SceneSpec::day(1), n)?;
    let target = generate(&SceneSpec::night(2), n)?;
    let mut cfg = TrainConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.log_every = 0;
    let mut log = std::io::sink();

    let so = train(&cfg, &source, None, None, &mut log)?;
    println!("source only\n{}", evaluate(&so.model, &target)?.to_table());

    cfg.uda = Some(UdaSection::default());
    let r1 = train(&cfg, &source, Some(&target), None, &mut log)?;
    println!("cross-modal adaptation\n{}", r1.target_report.as_ref().expect("labeled target").to_table());

    let pseudo = generate_pseudo_labels(&r1.model, &target, 0.66, PseudoSource::Branch)?;
    let kept: usize = pseudo.samples.iter().map(|p| p.labels_3d.iter().filter(|l| **l >= 0).count()).sum();
    println!("kept {kept} 3D pseudo-labels");
    cfg.uda.as_mut().unwrap().lambda_t = Some(0.1);
    let r2 = train(&cfg, &source, Some(&target), Some(&pseudo), &mut log)?;
    println!("with pseudo-labels\n{}", r2.target_report.as_ref().expect("labeled target").to_table());

    let path = std::env::temp_dir().join("mm2d3d-adapted.mmck");
    r2.model.save(&path)?;
    assert_eq!(Model::load(&path)?, r2.model);
    println!("checkpoint -> {}", path.display());
    Ok(())
}
