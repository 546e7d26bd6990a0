fn main() {
    std::process::exit(mappo::cli::run(std::env::args_os()));
}
