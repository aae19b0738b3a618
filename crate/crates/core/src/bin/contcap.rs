fn main() {
    std::process::exit(contcap::cli::run(std::env::args_os()));
}
