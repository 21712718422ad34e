fn main() {
    std::process::exit(diana_lite::cli::run());
}
