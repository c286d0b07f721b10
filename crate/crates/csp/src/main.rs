fn main() {
    std::process::exit(csp::run_cli(std::env::args_os()));
}
