fn main() {
    std::process::exit(strf::cli::main_with_args(std::env::args_os()));
}
