fn main() {
    std::process::exit(mfdnet_cli::run(std::env::args_os()));
}
