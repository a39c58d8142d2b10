fn main() {
    // CLI wired up once the benchmark stack lands.
}
