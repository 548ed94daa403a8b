fn main() {
    std::process::exit(asft_cli::run(std::env::args_os()));
}
