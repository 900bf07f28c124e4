fn main() {
    std::process::exit(masklab::cli::main());
}
