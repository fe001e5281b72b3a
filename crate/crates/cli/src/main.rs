fn main() {
    // Placeholder during bring-up; the real driver lands with the pipeline.
    eprintln!("realc: not yet wired");
    std::process::exit(1);
}
