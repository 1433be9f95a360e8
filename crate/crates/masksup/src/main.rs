fn main() {
    std::process::exit(masksup::cli::run(std::env::args_os()));
}
