fn main() {
    std::process::exit(epsr::cli::run(std::env::args_os()));
}
