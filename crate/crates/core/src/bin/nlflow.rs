fn main() {
    std::process::exit(nlflow::cli::run_cli(std::env::args_os()));
}
