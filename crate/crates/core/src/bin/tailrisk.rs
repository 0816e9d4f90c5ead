fn main() {
    std::process::exit(tailrisk::cli::main_with_args(std::env::args_os()));
}
