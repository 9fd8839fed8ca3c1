fn main() {
    std::process::exit(ineqtest::cli::run());
}
