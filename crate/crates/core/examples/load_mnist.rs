//! Loads MNIST from $DEEPGROK_DATA_DIR (or the first argument) and draws a
//! seeded training subset.
//!
//! cargo run --release --example load_mnist -- data/mnist 1000

use std::path::PathBuf;

use deepgrok::dataset::{make_split, Mnist};

fn main() -> deepgrok::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = Mnist::resolve_dir(args.first().map(PathBuf::from).as_deref())?;
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let data = Mnist::load_dir(&dir)?;
    println!(
        "{}: {} train, {} test images",
        dir.display(),
        data.train.len(),
        data.test.len()
    );

    let subset = make_split(&data.train, n, 0)?;
    println!("subset of {n}, class counts {:?}", subset.class_counts());
    let pixels = subset.inputs().row(0);
    let mean = pixels.iter().sum::<f64>() / pixels.len() as f64;
    println!(
        "first image: label {}, mean intensity {mean:.3}",
        subset.labels()[0]
    );
    for row in pixels.chunks(28).step_by(2) {
        let line: String = row
            .iter()
            .step_by(1)
            .map(|&p| {
                if p > 0.5 {
                    '#'
                } else if p > 0.1 {
                    '.'
                } else {
                    ' '
                }
            })
            .collect();
        println!("  {line}");
    }
    Ok(())
}
