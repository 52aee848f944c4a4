//! Regenerates the synthetic corpus fixtures used by the tests.
//!
//! ```text
//! cargo run -p codeinstruct --example make_fixtures -- <out_dir>
//! ```

use std::path::PathBuf;

use codeinstruct::hermetic::SyntheticCorpus;
use codeinstruct::jsonl::write_all_atomic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "tests/fixtures".into()));
    std::fs::create_dir_all(&out)?;
    let mixed = SyntheticCorpus::reference_mix(2023).with_rejects(40, 20).build();
    write_all_atomic(&out.join("language_mix_corpus.jsonl"), &mixed)?;
    let small = SyntheticCorpus::new(&[("Python", 24), ("Java", 16), ("Go", 12)], 11)
        .with_rejects(3, 2)
        .build();
    write_all_atomic(&out.join("small_corpus.jsonl"), &small)?;
    println!("wrote {} and {} records", mixed.len(), small.len());
    Ok(())
}
