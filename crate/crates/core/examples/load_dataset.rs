//! Loads a labeled CSV file (`f1,...,fd,label` per row, no header) or an IDX
//! image/label pair and prints a census.
//!
//! ```text
//! cargo run --release --example load_dataset -- data.csv
//! cargo run --release --example load_dataset -- images.idx labels.idx
//! ```
//!
//! Without arguments a small CSV file is generated in a temporary directory.

use std::path::PathBuf;

use fedal::data::{load_external, ExternalFormat, Split};

fn main() -> fedal::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let (path, format) = match args.as_slice() {
        [] => {
            let path = std::env::temp_dir().join("fedal_example.csv");
            let rows: String = (0..12).map(|i| format!("{},{},{}\n", i, (i * 7) % 5, i % 3)).collect();
            std::fs::write(&path, rows).expect("temporary directory is writable");
            (path, ExternalFormat::CsvLabeled)
        }
        [csv] => (csv.clone(), ExternalFormat::CsvLabeled),
        [images, labels, ..] => (images.clone(), ExternalFormat::IdxImages { labels: labels.clone() }),
    };
    let ds = load_external(&path, &format, None, Split::Train)?;
    println!(
        "{}: {} rows, {} features, {} classes",
        path.display(),
        ds.len(),
        ds.dim(),
        ds.class_count()
    );
    println!("per class {:?}", ds.label_census(0..ds.len()));
    println!("first row {:?} -> label {}", ds.row(0), ds.label(0));
    Ok(())
}
