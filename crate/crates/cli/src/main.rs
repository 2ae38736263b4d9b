fn main() {
    std::process::exit(jpop_cli::run(std::env::args_os()));
}
