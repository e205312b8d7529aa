fn main() {
    std::process::exit(facemask::cli::run(std::env::args_os()));
}
