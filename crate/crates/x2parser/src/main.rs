fn main() {
    std::process::exit(x2parser::cli::run(std::env::args_os()));
}
