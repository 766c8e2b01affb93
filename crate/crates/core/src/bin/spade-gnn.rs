fn main() {
    std::process::exit(spade_gnn::cli::run_cli(std::env::args_os()));
}
