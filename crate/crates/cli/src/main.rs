fn main() {
    std::process::exit(pneumox_cli::run_args(std::env::args_os()));
}
