fn main() {
    std::process::exit(bayesflow_cli::run(std::env::args_os()));
}
