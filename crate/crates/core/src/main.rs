fn main() {
    std::process::exit(mibci::cli::run(std::env::args_os()));
}
