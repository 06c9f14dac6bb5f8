fn main() {
    std::process::exit(negsim::cli::main_with_args(std::env::args_os()));
}
