fn main() {
    std::process::exit(tdam::cli::run(std::env::args_os()));
}
