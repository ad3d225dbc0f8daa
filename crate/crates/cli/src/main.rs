fn main() {
    std::process::exit(modal_arc_cli::run_cli(std::env::args_os()));
}
