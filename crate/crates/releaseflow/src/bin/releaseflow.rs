fn main() {
    std::process::exit(releaseflow::cli::main_with_args(std::env::args().collect()));
}
