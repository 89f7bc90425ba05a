fn main() {
    std::process::exit(fusegp::cli::run(std::env::args_os()));
}
