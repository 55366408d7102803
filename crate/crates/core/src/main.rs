fn main() {
    std::process::exit(hamkit::cli::run(std::env::args_os()));
}
