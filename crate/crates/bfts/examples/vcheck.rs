fn main() {
    for r in bfts::verify::run_all(None).unwrap() {
        println!("{} -> {} ({})", r.name, r.passed, r.detail);
    }
}
