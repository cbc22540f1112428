fn main() {
    std::process::exit(pneunet_cli::run(std::env::args_os()));
}
