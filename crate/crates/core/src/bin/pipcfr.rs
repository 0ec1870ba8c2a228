fn main() {
    std::process::exit(pipcfr::cli::main_with_args(std::env::args_os()));
}
