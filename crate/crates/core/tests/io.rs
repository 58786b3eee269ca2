use std::fs;

use grapal::io::{
    read_graph_dataset, read_node_dataset, validate_dir, write_graph_dataset, write_node_dataset, Requirements,
};
use grapal::scenario::{generate_synthetic, Dataset, SyntheticKind, SyntheticSpec};
use grapal::Error;

fn json<V: serde::Serialize>(v: &V) -> String {
    serde_json::to_string(v).unwrap()
}

#[test]
fn node_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let Dataset::Nodes(g) = generate_synthetic(&SyntheticSpec { nodes_per_class: 10, ..Default::default() }).unwrap()
    else {
        panic!()
    };
    write_node_dataset(dir.path(), &g).unwrap();
    let back = read_node_dataset::<f64>(dir.path(), false).unwrap();
    assert!(back.ids.is_identity());
    assert_eq!(json(&back.graph), json(&g));
    let v = validate_dir(dir.path(), Requirements { labels: true, domain: true, time: true });
    assert!(v.diagnostics.is_empty(), "{v}");
    assert_eq!(v.to_string(), "ok\n");
}

#[test]
fn link_and_graph_datasets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { kind: SyntheticKind::Lp, nodes_per_class: 10, ..Default::default() };
    let Dataset::Edges(g) = generate_synthetic(&spec).unwrap() else { panic!() };
    write_node_dataset(dir.path(), &g).unwrap();
    let back = read_node_dataset::<f64>(dir.path(), false).unwrap();
    assert_eq!(back.graph.edge_domain(), g.edge_domain());
    assert_eq!(json(&back.graph), json(&g));

    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { kind: SyntheticKind::Gc, graphs_per_class: 3, nodes_per_graph: 5, ..Default::default() };
    let Dataset::Graphs(c) = generate_synthetic(&spec).unwrap() else { panic!() };
    write_graph_dataset(dir.path(), &c).unwrap();
    let back = read_graph_dataset::<f64>(dir.path(), false).unwrap();
    assert_eq!(json(&back.collection), json(&c));
    assert!(validate_dir(dir.path(), Requirements::default()).is_ok());
}

#[test]
fn arbitrary_ids_are_remapped() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("edges.csv"), "src,dst,weight\nb,a,2\na,c,1\nb,a,0.5\n").unwrap();
    fs::write(dir.path().join("node_labels.csv"), "node_id,label,domain\na,0,1\nb,1,\nc,,2\n").unwrap();
    let d = read_node_dataset::<f64>(dir.path(), false).unwrap();
    assert_eq!(d.ids.originals(), ["a", "b", "c"]);
    let g = &d.graph;
    assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
    assert_eq!(g.edge_weights().unwrap(), &[2.5, 1.0]);
    assert_eq!(g.node_labels().unwrap(), &[Some(0), Some(1), None]);
    assert_eq!(g.node_domain().unwrap(), &[Some(1), None, Some(2)]);
    assert_eq!(g.feature_dim(), 0);

    let v = validate_dir(dir.path(), Requirements { labels: true, domain: true, time: false });
    assert!(v.is_ok());
    assert_eq!(v.dropped, ["b", "c"]);
    assert!(v.to_string().contains("remapped"));
}

#[test]
fn problems_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("edges.csv"), "src,dst\n0,1\n1,7\n").unwrap();
    fs::write(dir.path().join("node_features.csv"), "node_id,f0\n0,0.5\n1,x\n2,1\n").unwrap();
    fs::write(dir.path().join("node_labels.csv"), "node_id,label\n0,0\n1,1\n2,0\n").unwrap();
    let v = validate_dir(dir.path(), Requirements { labels: true, domain: true, time: false });
    assert!(!v.is_ok());
    let text = v.to_string();
    assert!(text.contains("edges.csv:3: dangling node id \"7\""), "{text}");
    assert!(text.contains("node_features.csv:3: non-numeric"), "{text}");
    assert!(text.contains("missing domain column"), "{text}");

    match read_node_dataset::<f64>(dir.path(), false) {
        Err(Error::Dataset { path, message }) => {
            assert!(path.ends_with("node_features.csv"));
            assert!(message.starts_with("line 3"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    fs::write(dir.path().join("node_features.csv"), "node_id,f0\n0,0.5\n1,1\n2,1\n").unwrap();
    let Err(Error::Dataset { message, .. }) = read_node_dataset::<f64>(dir.path(), false) else { panic!() };
    assert!(message.contains("line 3") && message.contains("unknown node"), "{message}");
}

#[test]
fn missing_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_node_dataset::<f64>(dir.path(), false), Err(Error::Dataset { .. })));
    assert!(!validate_dir(dir.path(), Requirements::default()).is_ok());
    assert!(!validate_dir(&dir.path().join("nope"), Requirements::default()).is_ok());
}
