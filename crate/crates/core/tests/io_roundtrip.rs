use nalgebra::DMatrix;
use reesf::io::{basis_export, dataset_csv, parse_dataset, score_surfaces, sha256_hex, FitReport, SurfaceTable};
use reesf::{build_connectivity, eigen_basis, Error, DEFAULT_EIGEN_TOL};

const SAMPLE: &str = "id,coord_x,coord_y,y,x1,x2
a,0.0,0.0,1.5,0.2,1.0
b,1.0,0.0,2.5,-0.4,0.5
c,0.0,1.0,0.5,1.1,-0.3
d,1.0,1.0,3.0,0.7,0.0
";

fn table(ids: &[&str], names: &[&str], values: DMatrix<f64>) -> SurfaceTable {
    SurfaceTable {
        ids: ids.iter().map(|s| s.to_string()).collect(),
        points: (0..ids.len()).map(|i| [i as f64, 0.0]).collect(),
        names: names.iter().map(|s| s.to_string()).collect(),
        values,
        se: None,
    }
}

#[test]
fn dataset_parses_and_round_trips() {
    let file = parse_dataset(SAMPLE.as_bytes()).unwrap();
    assert_eq!(file.ids, ["a", "b", "c", "d"]);
    assert_eq!(file.data.names, ["intercept", "x1", "x2"]);
    assert_eq!(file.data.x.column(0).iter().sum::<f64>(), 4.0);
    assert_eq!(file.data.x[(2, 1)], 1.1);
    assert_eq!(file.data.y[3], 3.0);
    assert_eq!(file.data.coords.points()[1], [1.0, 0.0]);

    let written = dataset_csv(&file.ids, &file.data).unwrap();
    let again = parse_dataset(written.as_bytes()).unwrap();
    assert_eq!(again.ids, file.ids);
    assert_eq!(again.data.x, file.data.x);
    assert_eq!(again.data.y, file.data.y);
    assert_eq!(again.data.coords.points(), file.data.coords.points());
    assert_eq!(dataset_csv(&again.ids, &again.data).unwrap(), written);
}

#[test]
fn malformed_datasets_are_rejected() {
    let cases = [
        ("wrong header", "site,x,y,z\n1,0,0,1\n2,1,0,1\n3,0,1,1\n"),
        ("non-numeric", "id,coord_x,coord_y,y\n1,0,0,abc\n2,1,0,1\n3,0,1,1\n"),
        ("missing value", "id,coord_x,coord_y,y,x1\n1,0,0,1,\n2,1,0,1,2\n3,0,1,1,3\n"),
        ("ragged row", "id,coord_x,coord_y,y\n1,0,0,1,7\n2,1,0,1\n3,0,1,1\n"),
        ("too few rows", "id,coord_x,coord_y,y\n1,0,0,1\n2,1,0,1\n"),
        ("duplicate id", "id,coord_x,coord_y,y\n1,0,0,1\n1,1,0,1\n3,0,1,1\n"),
        ("duplicate site", "id,coord_x,coord_y,y\n1,0,0,1\n2,0,0,2\n3,0,1,1\n"),
        ("non-finite", "id,coord_x,coord_y,y\n1,0,0,inf\n2,1,0,1\n3,0,1,1\n"),
        ("reserved name", "id,coord_x,coord_y,y,intercept\n1,0,0,1,1\n2,1,0,1,1\n3,0,1,1,1\n"),
    ];
    for (what, text) in cases {
        assert!(parse_dataset(text.as_bytes()).is_err(), "{what} was accepted");
    }
    assert!(matches!(
        parse_dataset(cases[1].1.as_bytes()),
        Err(Error::InvalidInput(msg)) if msg.contains("row 2")
    ));
}

#[test]
fn digest_is_sha256_of_the_raw_bytes() {
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    assert_ne!(sha256_hex(SAMPLE.as_bytes()), sha256_hex(SAMPLE.replace("3.0", "3.00").as_bytes()));
}

#[test]
fn surfaces_round_trip_with_and_without_errors() {
    let mut t = table(&["s1", "s2", "s3"], &["intercept", "x1"], DMatrix::from_row_slice(3, 2, &[1.0, 0.1, 2.0, 1.0 / 3.0, -1e-17, 4e10]));
    let plain = SurfaceTable::parse(t.to_csv().unwrap().as_bytes()).unwrap();
    assert_eq!(plain.values, t.values);
    assert!(plain.se.is_none());
    assert!(t.to_csv().unwrap().starts_with("id,coord_x,coord_y,svc_intercept,svc_x1\n"));

    t.se = Some(DMatrix::from_element(3, 2, 0.25));
    let csv = t.to_csv().unwrap();
    assert!(csv.starts_with("id,coord_x,coord_y,svc_intercept,se_intercept,svc_x1,se_x1\n"));
    let back = SurfaceTable::parse(csv.as_bytes()).unwrap();
    assert_eq!(back.ids, t.ids);
    assert_eq!(back.points, t.points);
    assert_eq!(back.values, t.values);
    assert_eq!(back.se, t.se);
}

#[test]
fn scoring_joins_on_ids_and_names() {
    let truth = table(&["a", "b", "c"], &["intercept", "x1"], DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]));
    // Same surfaces with rows and columns permuted, shifted by +1.
    let est = table(&["c", "a", "b"], &["x1", "intercept"], DMatrix::from_row_slice(3, 2, &[31.0, 4.0, 11.0, 2.0, 21.0, 3.0]));
    let scores = score_surfaces(&est, &truth).unwrap();
    assert_eq!(scores.len(), 2);
    for s in &scores {
        assert!((s.rmse - 1.0).abs() < 1e-15 && (s.mean_bias - 1.0).abs() < 1e-15, "{s:?}");
    }
    assert_eq!(scores[0].coefficient, "x1");

    let exact = score_surfaces(&truth, &truth).unwrap();
    assert!(exact.iter().all(|s| s.rmse == 0.0 && s.mean_bias == 0.0));

    let mismatch = table(&["a", "b", "zz"], &["intercept"], DMatrix::zeros(3, 1));
    assert!(matches!(score_surfaces(&mismatch, &truth), Err(Error::InvalidInput(_))));
    let short = table(&["a", "b"], &["intercept"], DMatrix::zeros(2, 1));
    assert!(score_surfaces(&short, &truth).is_err());
    let unrelated = table(&["a", "b", "c"], &["x9"], DMatrix::zeros(3, 1));
    assert!(score_surfaces(&unrelated, &truth).is_err());
}

#[test]
fn fit_report_json_round_trips() {
    let file = parse_dataset(SAMPLE.as_bytes()).unwrap();
    let mut report = FitReport::new("reesf-a2", &file.data, vec![1.0, -2.0, 0.5], sha256_hex(SAMPLE.as_bytes()));
    report.tau = Some(vec![Some(0.3), None, Some(1.5)]);
    report.alpha = Some(vec![Some(2.25)]);
    report.mc = Some(vec![Some(0.8), None, Some(0.4)]);
    report.loglik = Some(-123.456);
    report.converged = false;
    let json = report.to_json().unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["tau"][1], serde_json::Value::Null);
    assert_eq!(value["alpha"].as_array().unwrap().len(), 1);
    assert_eq!(value["n_sites"], 4);
    assert_eq!(FitReport::from_json(&json).unwrap(), report);
}

#[test]
fn basis_export_lists_vectors_and_moran_values() {
    let mut text = String::from("id,coord_x,coord_y,y\n");
    for i in 0..12 {
        text.push_str(&format!("p{i},{},{},{}\n", i % 4, i / 4, i * i % 7));
    }
    let file = parse_dataset(text.as_bytes()).unwrap();
    let c = build_connectivity(&file.data.coords, 1.0).unwrap();
    let basis = eigen_basis(&c, DEFAULT_EIGEN_TOL).unwrap();
    let (csv, sidecar) = basis_export(&file.ids, &basis, 1.0).unwrap();
    let mut lines = csv.lines();
    let head: Vec<String> = std::iter::once("id".to_string()).chain((1..=basis.n_vectors()).map(|l| format!("ev_{l}"))).collect();
    assert_eq!(lines.next().unwrap(), head.join(","));
    assert_eq!(lines.count(), 12);
    assert_eq!(sidecar.eigenvalues, basis.values());
    assert!((sidecar.connectivity_sum - c.matrix().sum()).abs() < 1e-12);
    for (m, l) in sidecar.moran.iter().zip(basis.values()) {
        assert!((m - 12.0 / c.matrix().sum() * l).abs() < 1e-12);
    }
}
