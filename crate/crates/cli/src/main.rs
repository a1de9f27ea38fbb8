fn main() {
    std::process::exit(latentlm_cli::run_cli(std::env::args_os()));
}
