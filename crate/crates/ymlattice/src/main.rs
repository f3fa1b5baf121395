fn main() {
    std::process::exit(ymlattice::cli::main_with_args(std::env::args_os()));
}
