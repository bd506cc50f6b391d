fn main() {
    std::process::exit(spoofnet_core::cli::run(std::env::args_os()));
}
