fn main() {
    std::process::exit(rsig_cli::run(std::env::args_os()));
}
