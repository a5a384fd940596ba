fn main() {
    std::process::exit(airan_market::cli::run(std::env::args_os()));
}
