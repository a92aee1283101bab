fn main() {
    std::process::exit(graphfill_cli::run(std::env::args_os()));
}
