fn main() {
    std::process::exit(flk::cli::run(std::env::args_os()));
}
