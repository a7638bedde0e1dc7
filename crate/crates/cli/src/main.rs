fn main() {
    std::process::exit(statediff_cli::run(std::env::args_os()));
}
