use deepgrok::detect::fixtures;
use deepgrok::report::{render_norm_comparison, render_run_figure, summarize, SUMMARY_HEADER};
use deepgrok::runner::{MetricsFile, MetricsHeader, MetricsRecord, TrainConfig};
use deepgrok::Error;

fn config(depth: usize, n_train: usize) -> TrainConfig {
    TrainConfig {
        depth,
        n_train,
        width: 50,
        ..TrainConfig::default()
    }
}

/// A metrics file whose accuracies follow the grokking fixture and whose
/// ranks fall late, with probes on every 5th record.
fn grokking_file(depth: usize, n_train: usize, norm_scale: f64) -> MetricsFile {
    let (train, test) = fixtures::grokking();
    let config = config(depth, n_train);
    let records = train
        .steps()
        .iter()
        .enumerate()
        .map(|(i, &step)| MetricsRecord {
            step,
            train_loss: 1.0 - train.values()[i],
            test_loss: 1.0 - test.values()[i],
            train_acc: train.values()[i],
            test_acc: test.values()[i],
            weight_norm: norm_scale * (100.0 - (step as f64).log10()),
            per_layer_rank: (0..depth - 1)
                .map(|l| 50 - l * (step as usize * 4 / 100_000))
                .collect(),
            per_layer_probe_acc: (i % 5 == 0).then(|| vec![test.values()[i]; depth - 1]),
            wall_time: i as f64,
        })
        .collect();
    MetricsFile {
        header: MetricsHeader::new(&config),
        records,
        diagnostic: None,
    }
}

fn polylines(doc: &roxmltree::Document) -> Vec<(String, Vec<(f64, f64)>)> {
    doc.descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .map(|n| {
            let pts = n
                .attribute("points")
                .unwrap()
                .split(' ')
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect();
            (n.attribute("class").unwrap().to_string(), pts)
        })
        .collect()
}

#[test]
fn run_figure_is_valid_deterministic_and_monotone_in_x() {
    let file = grokking_file(5, 1000, 1.0);
    let svg = render_run_figure(&file);
    assert_eq!(svg, render_run_figure(&file));
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let lines = polylines(&doc);
    // 4 rank layers, train and test, 4 probe layers
    assert_eq!(lines.len(), 10);
    for (class, pts) in &lines {
        assert!(pts.windows(2).all(|w| w[0].0 < w[1].0), "{class}");
    }
    assert!(!svg.contains("warning"));
}

#[test]
fn test_curve_rises_after_train_saturates() {
    let svg = render_run_figure(&grokking_file(5, 1000, 1.0));
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let test = polylines(&doc)
        .into_iter()
        .find(|(c, _)| c == "acc test")
        .unwrap()
        .1;
    // steepest segment (y grows downwards)
    let steepest = test
        .windows(2)
        .max_by(|a, b| {
            let s = |w: &[(f64, f64)]| (w[0].1 - w[1].1) / (w[1].0 - w[0].0);
            s(a).total_cmp(&s(b))
        })
        .unwrap();
    let sat_x: f64 = doc
        .descendants()
        .find(|n| n.attribute("class") == Some("train-sat"))
        .unwrap()
        .attribute("x1")
        .unwrap()
        .parse()
        .unwrap();
    assert!(steepest[0].0 > sat_x);
}

#[test]
fn missing_fields_give_a_partial_figure() {
    let mut file = grokking_file(4, 1000, 1.0);
    for r in &mut file.records {
        r.per_layer_probe_acc = None;
    }
    let svg = render_run_figure(&file);
    roxmltree::Document::parse(&svg).unwrap();
    assert!(svg.contains("warning: no probe records"));

    file.records.clear();
    let svg = render_run_figure(&file);
    roxmltree::Document::parse(&svg).unwrap();
    assert!(svg.contains("warning: no metrics records"));
}

#[test]
fn norm_comparison_overlays_runs() {
    let a = grokking_file(12, 5000, 1.0);
    let b = grokking_file(12, 7000, 0.9);
    let svg = render_norm_comparison(&[&a, &b], None).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let classes: Vec<String> = polylines(&doc).into_iter().map(|(c, _)| c).collect();
    assert_eq!(
        classes,
        ["norm run-1", "norm run-2", "rank run-1", "rank run-2"]
    );

    let svg = render_norm_comparison(&[&a, &a], None).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let lines = polylines(&doc);
    assert_eq!(lines[0].1, lines[1].1);
    assert_eq!(lines[2].1, lines[3].1);
}

#[test]
fn norm_comparison_arguments() {
    let a = grokking_file(12, 5000, 1.0);
    let shallow = grokking_file(4, 5000, 1.0);
    assert!(matches!(
        render_norm_comparison(&[&a], None),
        Err(Error::Argument(_))
    ));
    assert!(matches!(
        render_norm_comparison(&[&a, &shallow], None),
        Err(Error::Argument(_))
    ));
    assert!(matches!(
        render_norm_comparison(&[&a, &a], Some(11)),
        Err(Error::Argument(_))
    ));
}

#[test]
fn summary_rows() {
    assert_eq!(
        summarize(&[]).unwrap(),
        format!("{}\n", SUMMARY_HEADER.join("\t"))
    );
    let a = grokking_file(5, 1000, 1.0);
    let table = summarize(&[("a".into(), &a)]).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row.len(), SUMMARY_HEADER.len());
    assert_eq!(row[0], "a");
    assert_eq!(row[2], "grokking");
}
