use std::path::PathBuf;

use bnt::data::{apply_scaler, clean, fit_scaler, load_csv, shuffle_split};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn bundled_tables_clean_to_known_shapes() {
    // (file, response, rows after cleaning, features after cleaning)
    let cases = [
        ("autompg.csv", "mpg", 392, 7),
        ("housing.csv", "medv", 506, 13),
        ("concrete.csv", "compressive_strength", 1030, 8),
    ];
    for (file, response, n, d) in cases {
        let raw = load_csv(data(file)).unwrap();
        let ds = clean(&raw, response).unwrap();
        assert_eq!((ds.n(), ds.d()), (n, d), "{file}");
        assert!(!ds.feature_names().iter().any(|f| f == response));
    }
}

#[test]
fn autompg_drops_rows_with_unknown_horsepower_and_the_name_column() {
    let raw = load_csv(data("autompg.csv")).unwrap();
    let hp = raw.names.iter().position(|c| c == "horsepower").unwrap();
    let name = raw.names.iter().position(|c| c == "car_name").unwrap();
    assert!(raw.is_non_numeric(name));
    let missing: Vec<_> = raw.missing_cells().into_iter().filter(|&(_, j)| j == hp).collect();
    assert_eq!(missing.len(), 5);

    let ds = clean(&raw, "mpg").unwrap();
    assert_eq!(ds.n(), raw.n_rows() - 5);
    assert!(ds.feature_names().iter().all(|f| f != "car_name"));
}

#[test]
fn split_then_scale_keeps_training_columns_in_the_unit_interval() {
    let ds = clean(&load_csv(data("housing.csv")).unwrap(), "medv").unwrap();
    let split = shuffle_split(&ds, 0.7, 2024).unwrap();
    assert_eq!(split.train.n() + split.test.n(), ds.n());
    assert_eq!(split.train.n(), (0.7 * ds.n() as f64).round() as usize);

    let spec = fit_scaler(&split.train);
    let train = apply_scaler(&split.train, &spec).unwrap();
    for j in 0..train.d() {
        let col = train.column(j);
        let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(lo >= 0.0 && hi <= 1.0 + 1e-12, "column {j}: [{lo}, {hi}]");
    }
    // The response round-trips through the scaler.
    let test = apply_scaler(&split.test, &spec).unwrap();
    for (scaled, original) in test.response().iter().zip(split.test.response()) {
        assert!((spec.response.unscale(*scaled) - original).abs() < 1e-9);
    }
}
