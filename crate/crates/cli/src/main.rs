fn main() {
    std::process::exit(wam_cli::main_with_args(std::env::args()));
}
