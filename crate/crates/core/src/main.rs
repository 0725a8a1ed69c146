fn main() {
    std::process::exit(dsd::cli::run(std::env::args_os()));
}
