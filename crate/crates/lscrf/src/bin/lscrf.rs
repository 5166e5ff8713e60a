fn main() {
    lscrf::cli::main();
}
