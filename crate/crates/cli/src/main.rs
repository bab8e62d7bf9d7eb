fn main() {
    std::process::exit(leaprec_cli::run(std::env::args_os()));
}
