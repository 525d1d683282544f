fn main() {
    std::process::exit(min_core::cli::run_command(std::env::args_os()));
}
