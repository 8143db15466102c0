fn main() {
    std::process::exit(pgas_stream::cli::main_with_args(std::env::args_os()));
}
