fn main() {
    std::process::exit(meshrefine::pipeline::cli::run(std::env::args_os()));
}
