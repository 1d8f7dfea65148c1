fn main() {
    std::process::exit(traj_analogy::cli::main_with_args(std::env::args_os()));
}
