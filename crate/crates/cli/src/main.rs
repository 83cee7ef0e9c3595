fn main() {
    std::process::exit(dforest_cli::run(std::env::args_os()));
}
