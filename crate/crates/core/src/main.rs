fn main() {
    std::process::exit(gopp::bench::cli::run(std::env::args_os().collect()));
}
