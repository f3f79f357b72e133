fn main() {
    std::process::exit(rrt::cli::main_with_args(std::env::args_os()));
}
