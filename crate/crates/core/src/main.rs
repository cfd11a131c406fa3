fn main() {
    std::process::exit(dyntok::cli::run(std::env::args_os()));
}
