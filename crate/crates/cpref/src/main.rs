fn main() {
    std::process::exit(cpref::cli::run());
}
