fn main() {
    std::process::exit(coagfrag::cli::main_with_args(std::env::args_os()));
}
