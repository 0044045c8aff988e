fn main() {
    std::process::exit(mebface::cli::run(std::env::args_os()));
}
