fn main() {
    std::process::exit(cmfd::cli::main_with(std::env::args_os()));
}
