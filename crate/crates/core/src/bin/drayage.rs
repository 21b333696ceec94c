fn main() {
    std::process::exit(drayage::cli::main_with_args(std::env::args_os()));
}
