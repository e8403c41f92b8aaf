fn main() {
    std::process::exit(panelfactor::cli::main_with_args(std::env::args_os()));
}
