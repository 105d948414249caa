fn main() {
    std::process::exit(hinmal_cli::run(std::env::args_os()));
}
