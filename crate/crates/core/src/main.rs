fn main() {
    std::process::exit(streamkit::cli::run(std::env::args_os()));
}
