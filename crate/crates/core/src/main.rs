fn main() {
    std::process::exit(bridgeforge::cli::run(std::env::args_os()));
}
