use tapsense_core::audio::rescale_unit;

fn load() -> Vec<(String, Vec<f64>)> {
    let text = include_str!("fixtures/characterization_means.csv");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 13);
    lines
        .map(|l| {
            let mut it = l.split(',');
            let name = it.next().unwrap().to_string();
            (name, it.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn published_means_are_unit_range() {
    let rows = load();
    assert_eq!(rows.len(), 12);
    for (name, r) in &rows {
        assert_eq!(r.len(), 12, "{name}");
        assert!(r.iter().all(|v| (0.0..=1.0).contains(v)), "{name}");
    }
}

#[test]
fn rescaling_published_means_stays_in_range() {
    let rows: Vec<Vec<f64>> = load().into_iter().map(|(_, r)| r).collect();
    let out = rescale_unit(&rows).unwrap();
    for c in 0..12 {
        let col: Vec<f64> = out.iter().map(|r| r[c]).collect();
        assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(col.contains(&0.0) && col.contains(&1.0));
    }
}
