fn main() {
    std::process::exit(deocc::cli::main_with(std::env::args_os()));
}
