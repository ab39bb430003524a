fn main() {
    std::process::exit(kdps::cli::run(std::env::args_os()));
}
