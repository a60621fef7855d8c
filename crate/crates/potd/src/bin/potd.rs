fn main() {
    std::process::exit(potd::cli::run(std::env::args_os()));
}
