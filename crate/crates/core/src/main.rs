fn main() {
    std::process::exit(rappp::cli::run(std::env::args_os()));
}
