fn main() {
    std::process::exit(antiuav::cli::run(std::env::args().collect()));
}
