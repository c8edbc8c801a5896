fn main() {
    std::process::exit(sgopt::cli::main_with_args(std::env::args_os()));
}
