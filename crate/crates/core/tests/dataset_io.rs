use std::fmt::Write as _;
use std::fs;

use spade_gnn::dataset::synthetic::{citation_like, SyntheticSpec};
use spade_gnn::dataset::{load_cora_dir, make_split, DatasetSource};

#[test]
fn cora_format_directory_loads_back_exactly() {
    let ds = citation_like(
        &SyntheticSpec {
            nodes: 150,
            vocabulary: 60,
            ..Default::default()
        },
        13,
    );
    let tmp = tempfile::tempdir().unwrap();
    let id = |i: usize| 1000 + 37 * i;
    let mut content = String::new();
    for i in 0..ds.n() {
        write!(content, "{}", id(i)).unwrap();
        for v in ds.features.row(i) {
            write!(content, "\t{}", *v as u8).unwrap();
        }
        writeln!(content, "\t{}", ds.class_names[ds.labels[i]]).unwrap();
    }
    let mut cites = String::new();
    for (i, j, _) in ds.graph.edges() {
        // citing direction is irrelevant; write both orders across edges
        if (i + j) % 2 == 0 {
            writeln!(cites, "{}\t{}", id(i), id(j)).unwrap();
        } else {
            writeln!(cites, "{} {}", id(j), id(i)).unwrap();
        }
    }
    fs::write(tmp.path().join("cora.content"), content).unwrap();
    fs::write(tmp.path().join("cora.cites"), cites).unwrap();

    let back = load_cora_dir(tmp.path()).unwrap();
    assert_eq!(back.features, ds.features);
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.class_names, ds.class_names);
    assert_eq!(back.graph, ds.graph);
    assert_eq!(back.fingerprint(), ds.fingerprint());

    let via_source = DatasetSource::parse(&format!("cora:{}", tmp.path().display()))
        .load()
        .unwrap();
    assert_eq!(via_source, back);

    let split = make_split(&back, 5, 1).unwrap();
    assert_eq!(split.train_ids.len(), 5 * back.num_classes());
    assert_eq!(split.train_ids.len() + split.test_ids.len(), back.n());
}
