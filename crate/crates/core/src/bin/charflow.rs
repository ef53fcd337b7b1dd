fn main() {
    std::process::exit(charflow::cli::run(std::env::args_os()));
}
