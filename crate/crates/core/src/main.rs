fn main() {
    std::process::exit(wheelnav::cli::main());
}
