fn main() {
    // Populated once the analysis pipeline is complete.
}
