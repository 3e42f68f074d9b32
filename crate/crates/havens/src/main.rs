fn main() {
    std::process::exit(havens::cli::main());
}
