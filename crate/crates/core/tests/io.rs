use std::fs;
use std::path::PathBuf;

use uppkit::market::{load_market, save_market, Format};
use uppkit::{ErrorKind, ProductId};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn bundled_file_derives_diversion_from_shares() {
    let loaded = load_market(fixture("staples_od.json"), Format::Json).unwrap();
    let d = loaded.diversion.get(&ProductId::from("SP"), &ProductId::from("OD")).unwrap();
    assert!((d - 0.316 / 0.527).abs() < 1e-12);
    assert!(loaded.merger.is_some());
}

#[test]
fn json_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_market(fixture("staples_od.json"), Format::Json).unwrap();
    let path = dir.path().join("copy.json");
    save_market(&path, &loaded).unwrap();
    let again = load_market(&path, Format::Json).unwrap();
    assert_eq!(again.market, loaded.market);
    let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(again.diversion.values()), bits(loaded.diversion.values()));
}

#[test]
fn csv_directory_loads_and_reports_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("products.csv"),
        "id,firm,revenue,margin\na,A,100,0.3\nb,B,80,0.25\nc,C,50,0.2\n",
    )
    .unwrap();
    fs::write(dir.path().join("diversion.csv"), "from,to,value\na,b,0.3\nb,a,0.35\n").unwrap();
    let loaded = load_market(dir.path(), Format::infer(dir.path())).unwrap();
    assert_eq!(loaded.market.len(), 3);
    assert!(loaded.diversion.get(&"a".into(), &"c".into()).is_none());

    fs::write(dir.path().join("products.csv"), "id,firm,revenue,margin\na,A,100,0.3\nb,B,lots,0.25\n").unwrap();
    let err = load_market(dir.path(), Format::Csv).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Validation);
    assert!(err.to_string().contains("row"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_market(fixture("nope.json"), Format::Json).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Io);
}
