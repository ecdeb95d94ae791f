fn main() {
    std::process::exit(lindeform::cli::run(std::env::args_os()));
}
