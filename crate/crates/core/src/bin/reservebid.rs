fn main() {
    std::process::exit(reservebid::cli::main_with_args(std::env::args_os()));
}
