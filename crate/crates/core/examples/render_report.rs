//! Renders the run figure for each metrics file given, and a weight-norm
//! comparison when there are several of equal depth.
//!
//! cargo run --release --example render_report -- runs/a/metrics.jsonl runs/b/metrics.jsonl

use std::path::PathBuf;

use deepgrok::report::{render_norm_comparison, render_run_figure, sibling_path, summarize};
use deepgrok::runner::MetricsFile;
use deepgrok::Error;

fn main() -> deepgrok::Result<()> {
    let paths: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if paths.is_empty() {
        return Err(Error::Argument(
            "pass one or more metrics.jsonl files".into(),
        ));
    }
    let files = paths
        .iter()
        .map(|p| MetricsFile::read(p))
        .collect::<deepgrok::Result<Vec<_>>>()?;
    for (path, file) in paths.iter().zip(&files) {
        let out = sibling_path(path, "figure.svg");
        std::fs::write(&out, render_run_figure(file)).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        println!("wrote {}", out.display());
    }
    if files.len() >= 2 {
        let refs: Vec<&MetricsFile> = files.iter().collect();
        let out = sibling_path(&paths[0], "norm-comparison.svg");
        std::fs::write(&out, render_norm_comparison(&refs, None)?).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        println!("wrote {}", out.display());
    }
    let named: Vec<(String, &MetricsFile)> = paths
        .iter()
        .map(|p| p.display().to_string())
        .zip(&files)
        .collect();
    print!("{}", summarize(&named)?);
    Ok(())
}
