fn main() {
    std::process::exit(bisimlab::cli::run(std::env::args_os()));
}
