fn main() {
    std::process::exit(proxnn::cli::run(std::env::args_os()));
}
