fn main() {
    std::process::exit(qsdc::cli::main_with_args(std::env::args_os()));
}
