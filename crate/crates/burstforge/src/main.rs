fn main() {
    std::process::exit(burstforge::cli::run(std::env::args_os()));
}
