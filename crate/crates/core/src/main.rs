fn main() {
    std::process::exit(spikegrow::cli::main())
}
