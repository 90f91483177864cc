fn main() {
    std::process::exit(hawkes_cli::main_with(std::env::args_os()));
}
