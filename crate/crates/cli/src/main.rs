fn main() {
    std::process::exit(frugal_cli::main_with(std::env::args_os()));
}
