fn main() {
    std::process::exit(coeffid::cli::main_with_args(std::env::args_os()));
}
