fn main() {
    std::process::exit(gp_minibatch::cli::main_with_args(std::env::args_os()));
}
