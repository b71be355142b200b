fn main() {
    std::process::exit(gridcert::cli::run());
}
