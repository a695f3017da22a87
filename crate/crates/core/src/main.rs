fn main() {
    std::process::exit(dannlime::cli::run(std::env::args_os()));
}
