//! Rewrites the committed golden fixtures: `cargo run --example regenerate_fixtures [ROOT]`.

fn main() {
    let root = std::env::args_os()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(data2ld::fixtures::fixture_root);
    if let Err(e) = data2ld::fixtures::regenerate_fixtures(&root) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("fixtures written to {}", root.display());
}
