fn main() {
    std::process::exit(coldsense::cli::run_cli(std::env::args_os()));
}
