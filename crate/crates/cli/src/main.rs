fn main() {
    std::process::exit(tstcc_cli::main_with_args(std::env::args_os()));
}
