fn main() {
    std::process::exit(douglas_core::cli::main_with_args(std::env::args_os()));
}
