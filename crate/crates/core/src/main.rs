fn main() {
    std::process::exit(smpphat::cli::run(std::env::args_os()));
}
