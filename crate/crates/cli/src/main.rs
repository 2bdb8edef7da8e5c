fn main() {
    std::process::exit(xlcons_cli::main_with_args(std::env::args_os()));
}
