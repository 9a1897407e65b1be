fn main() {
    std::process::exit(straightflow::cli::run(std::env::args_os()));
}
