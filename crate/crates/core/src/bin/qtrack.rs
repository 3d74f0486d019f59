fn main() {
    std::process::exit(qtrack::cli::main());
}
