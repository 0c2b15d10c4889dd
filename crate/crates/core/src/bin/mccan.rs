fn main() {
    std::process::exit(mccan::cli::run(std::env::args_os()));
}
