fn main() {
    std::process::exit(kinestim::cli::run(std::env::args_os()));
}
