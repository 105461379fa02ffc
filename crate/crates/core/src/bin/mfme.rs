fn main() {
    std::process::exit(mfme::cli::run(std::env::args().skip(1).collect()));
}
