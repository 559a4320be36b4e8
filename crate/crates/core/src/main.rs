fn main() {
    std::process::exit(ggk_core::cli::main_with_args(std::env::args_os()));
}
