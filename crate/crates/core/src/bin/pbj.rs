fn main() {
    std::process::exit(pbj::cli::run(std::env::args_os()));
}
