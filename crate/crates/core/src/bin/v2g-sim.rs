fn main() {
    std::process::exit(v2g_sim::cli::main_with_args(std::env::args_os()));
}
