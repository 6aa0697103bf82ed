fn main() {
    std::process::exit(lrsdp::cli::run_cli(std::env::args_os()));
}
