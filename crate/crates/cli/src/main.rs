fn main() {
    std::process::exit(lsk_cli::run(std::env::args_os()));
}
