fn main() {
    std::process::exit(decsolve_cli::execute(std::env::args_os()));
}
