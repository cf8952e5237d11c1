fn main() {
    std::process::exit(epialign::cli::run(std::env::args_os()));
}
