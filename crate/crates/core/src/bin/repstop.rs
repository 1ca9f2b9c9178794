fn main() {
    std::process::exit(repstop::cli::run(std::env::args_os()));
}
