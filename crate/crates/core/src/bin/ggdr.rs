fn main() {
    std::process::exit(ggdr::cli::run(std::env::args_os()));
}
