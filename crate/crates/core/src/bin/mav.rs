fn main() {
    std::process::exit(mav_core::cli::main_with_args(std::env::args_os()));
}
