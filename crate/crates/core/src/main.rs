fn main() {
    std::process::exit(embcomm::cli::main_with_args(std::env::args_os()));
}
