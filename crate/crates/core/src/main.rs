fn main() {
    std::process::exit(resdetect::cli::run(std::env::args_os()));
}
