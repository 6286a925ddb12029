fn main() {
    std::process::exit(percnn::cli::run_from(std::env::args_os()));
}
