fn main() {
    std::process::exit(surjlab::cli::run());
}
