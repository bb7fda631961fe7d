fn main() {
    std::process::exit(brainfit::cli::run(std::env::args_os()));
}
