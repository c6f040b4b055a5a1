fn main() {
    std::process::exit(hoigen::cli::main_with_args(std::env::args_os()));
}
