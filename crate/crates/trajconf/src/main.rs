fn main() {
    std::process::exit(trajconf::cli::run(std::env::args_os()));
}
