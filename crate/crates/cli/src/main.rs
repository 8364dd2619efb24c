fn main() {
    std::process::exit(scorelab_cli::main_with_args(std::env::args_os()));
}
