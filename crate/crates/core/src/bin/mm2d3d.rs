fn main() {
    std::process::exit(mm2d3d::cli::run(std::env::args_os()));
}
