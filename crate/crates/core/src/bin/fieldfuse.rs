fn main() {
    std::process::exit(fieldfuse::cli::run(std::env::args_os()));
}
