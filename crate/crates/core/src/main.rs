fn main() {
    std::process::exit(perturbnet::cli::cli_dispatch(std::env::args_os()));
}
