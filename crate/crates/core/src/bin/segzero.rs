fn main() {
    segzero::cli::init_logging();
    std::process::exit(segzero::cli::main_with_args(std::env::args_os()));
}
