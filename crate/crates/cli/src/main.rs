fn main() {
    std::process::exit(dtwc_cli::run(std::env::args_os()));
}
