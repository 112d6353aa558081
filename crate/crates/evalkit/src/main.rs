fn main() {
    std::process::exit(oda_evalkit::cli::main_with_args(std::env::args_os()));
}
