fn main() {
    std::process::exit(vesselseg::cli::run(std::env::args_os()));
}
