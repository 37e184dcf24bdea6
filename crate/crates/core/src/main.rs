fn main() {
    std::process::exit(grasp::cli::run(std::env::args_os()));
}
