fn main() {
    std::process::exit(montecheck::cli::main_with_args(std::env::args_os()));
}
