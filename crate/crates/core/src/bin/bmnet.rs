fn main() {
    std::process::exit(bmnet::cli::run_cli(std::env::args_os()));
}
