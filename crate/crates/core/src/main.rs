fn main() {
    std::process::exit(spherefactor::cli::run(std::env::args_os()));
}
