fn main() {
    std::process::exit(csjscc::cli::run(std::env::args_os()));
}
