fn main() {
    std::process::exit(hac::cli::main_with(std::env::args_os()));
}
