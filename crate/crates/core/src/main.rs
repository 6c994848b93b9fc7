fn main() {
    std::process::exit(blockrate::cli::main_with_args(std::env::args_os()));
}
