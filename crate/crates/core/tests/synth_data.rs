use gtr_core::asc_graph::{build_graph, write_jsonl, DatasetRecord, SigmaD};
use gtr_core::synth_data::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noiseless() -> Vec<ClassTemplate> {
    builtin_templates()
        .into_iter()
        .map(|t| t.with_noise(0.0, 0.0, 0.0))
        .collect()
}

#[test]
fn noiseless_scene_is_canonical_layout() {
    let templates = noiseless();
    let records = generate(&templates, 4, 9, Rotation::Fixed(0.0)).unwrap();
    for r in &records {
        let t = &templates[r.label];
        assert_eq!(r.centers.len(), t.scatterers.len());
        for (c, s) in r.centers.iter().zip(&t.scatterers) {
            assert_eq!((c.x, c.y), (s.x, s.y));
            assert_eq!(c.amplitude, s.amplitude);
            assert_eq!((c.alpha, c.length, c.phi, c.gamma), (s.alpha, s.length, s.phi, s.gamma));
        }
    }
}

#[test]
fn same_seed_same_bytes() {
    let bytes = |seed| {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &generate(&builtin_templates(), 20, seed, Rotation::Full).unwrap()).unwrap();
        buf
    };
    assert_eq!(bytes(4), bytes(4));
    assert_ne!(bytes(4), bytes(5));
}

#[test]
fn labels_are_balanced_and_interleaved() {
    let records = generate(&builtin_templates(), 5, 0, Rotation::Full).unwrap();
    assert_eq!(records.len(), 15);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.label, i % 3);
    }
}

#[test]
fn count_stays_in_range_over_many_draws() {
    let layout: Vec<BaseScatterer> = (0..8)
        .map(|i| BaseScatterer {
            x: i as f64,
            y: (i * i) as f64 * 0.1,
            amplitude: 1.0,
            alpha: 0.0,
            length: 0.0,
            phi: 0.0,
            gamma: 0.0,
        })
        .collect();
    for (dropout, k_min, k_max) in [(0.6, 3, 5), (0.95, 2, 8), (0.0, 2, 4)] {
        let t = ClassTemplate {
            name: "many".into(),
            scatterers: layout.clone(),
            position_jitter: 0.1,
            amplitude_jitter: 0.1,
            dropout,
            k_min,
            k_max,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let k = sample_scene(&t, Rotation::Full, &mut rng).len();
            assert!((k_min..=k_max).contains(&k), "{k} outside [{k_min}, {k_max}]");
        }
    }
}

#[test]
fn builtin_shapes() {
    let t = builtin_templates();
    let names: Vec<&str> = t.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, ["line", "rectangle", "cross"]);

    let line = &t[0].scatterers;
    assert_eq!(line.len(), 5);
    let (a, b) = (&line[0], &line[4]);
    for s in line {
        let cross = (b.x - a.x) * (s.y - a.y) - (b.y - a.y) * (s.x - a.x);
        assert!(cross.abs() < 1e-12);
    }

    assert_eq!(t[1].scatterers.len(), 6);

    let cross = &t[2].scatterers;
    let at = |x: f64, y: f64| cross.iter().filter(|s| s.x == x && s.y == y).count();
    assert_eq!(at(0.0, 0.0), 1);
    let horizontal: Vec<_> = cross.iter().filter(|s| s.y == 0.0).collect();
    let vertical: Vec<_> = cross.iter().filter(|s| s.x == 0.0).collect();
    assert_eq!(horizontal.len(), 3);
    assert_eq!(vertical.len(), 3);
    assert_eq!(cross.len(), 5);

    // the alpha codes differ between classes
    let codes = |i: usize| {
        let mut v: Vec<i64> = t[i].scatterers.iter().map(|s| (s.alpha * 2.0) as i64).collect();
        v.sort_unstable();
        v
    };
    assert_ne!(codes(0), codes(1));
    assert_ne!(codes(1), codes(2));
    assert_ne!(codes(0), codes(2));
}

#[test]
fn templates_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    save_templates(&path, &builtin_templates()).unwrap();
    assert_eq!(load_templates(&path).unwrap(), builtin_templates());
    std::fs::write(&path, r#"[{"name":"bad","scatterers":[],"position_jitter":0,"amplitude_jitter":0,"dropout":0,"k_min":1,"k_max":3}]"#).unwrap();
    assert!(load_templates(&path).is_err());
}

fn sorted_distances(r: &DatasetRecord, width: usize) -> Vec<f64> {
    let c = &r.centers;
    let mut d = Vec::new();
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            d.push(((c[i].x - c[j].x).powi(2) + (c[i].y - c[j].y).powi(2)).sqrt());
        }
    }
    d.sort_by(|a, b| b.total_cmp(a));
    d.resize(width, 0.0);
    d
}

#[test]
fn nearest_centroid_on_distances_separates_classes() {
    let templates = builtin_templates();
    assert!(templates.iter().all(|t| t.position_jitter <= 0.1));
    let train = generate(&templates, 200, 1, Rotation::Full).unwrap();
    let test = generate(&templates, 100, 2, Rotation::Full).unwrap();
    let width = 15;
    let mut centroids = vec![vec![0.0; width]; 3];
    let mut counts = [0usize; 3];
    for r in &train {
        for (c, v) in centroids[r.label].iter_mut().zip(sorted_distances(r, width)) {
            *c += v;
        }
        counts[r.label] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = test
        .iter()
        .filter(|r| {
            let d = sorted_distances(r, width);
            let dist = |c: &Vec<f64>| c.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..3).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])));
            best == Some(r.label)
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 0.8, "nearest-centroid accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_preserves_edge_weights(theta in 0.0..std::f64::consts::TAU, class in 0usize..3, seed in any::<u64>()) {
        let t = builtin_templates().swap_remove(class).with_noise(0.0, 0.1, 0.0);
        let base = sample_scene(&t, Rotation::Fixed(0.0), &mut ChaCha8Rng::seed_from_u64(seed));
        let turned = sample_scene(&t, Rotation::Fixed(theta), &mut ChaCha8Rng::seed_from_u64(seed));
        let g0 = build_graph(&base, SigmaD::Fixed(1.5)).unwrap();
        let g1 = build_graph(&turned, SigmaD::Fixed(1.5)).unwrap();
        for (a, b) in g0.weights().iter().zip(g1.weights()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((g0.sigma_d() - g1.sigma_d()).abs() < 1e-12);
    }
}
