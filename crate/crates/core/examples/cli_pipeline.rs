//! The command-line pipeline driven in-process: generate, train, evaluate.

fn main() {
    let dir = std::env::temp_dir().join("mm2d3d-cli-example");
    let d = |p: &str| dir.join(p).display().to_string();
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("day.toml"), "seed = 1\n").unwrap();
    std::fs::write(dir.join("run.toml"), "[data]\nsource = \"day\"\n[train]\nepochs = 1\n").unwrap();

    for argv in [
        vec!["generate", "--spec", &d("day.toml"), "--out", &d("day"), "--count", "8"],
        vec!["train", "--config", &d("run.toml"), "--out", &d("run")],
        vec!["evaluate", "--checkpoint", &d("run/model.mmck"), "--data", &d("day"), "--report", &d("report.txt")],
    ] {
        println!("$ mm2d3d {}", argv.join(" "));
        let code = mm2d3d::cli::run(std::iter::once("mm2d3d").chain(argv.iter().copied()));
        assert_eq!(code, 0);
    }
}
