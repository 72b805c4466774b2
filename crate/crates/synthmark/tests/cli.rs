//! End-to-end runs of the compiled binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synthmark"))
}

fn write_inputs(dir: &Path) {
    let csv = "age,height,city,score\n\
               20,150.5,paris,1\n21,151.0,paris,2\n22,152.5,lyon,1\n\
               23,153.0,lyon,3\n24,154.5,paris,2\n25,155.0,nice,1\n\
               26,156.5,paris,3\n27,157.0,lyon,2\n28,158.5,paris,1\n\
               29,159.0,nice,2\n30,160.5,paris,3\n31,161.0,lyon,1\n\
               32,162.5,paris,2\n33,163.0,nice,3\n34,164.5,paris,1\n\
               35,165.0,lyon,2\n36,166.5,paris,3\n37,167.0,nice,1\n\
               38,168.5,lyon,2\n39,169.0,paris,3\n";
    std::fs::write(dir.join("data.csv"), csv).unwrap();
    let schema = r#"[
        {"name": "age", "kind": "continuous"},
        {"name": "height", "kind": "continuous"},
        {"name": "city", "kind": "categorical"},
        {"name": "score", "kind": "categorical"}
    ]"#;
    std::fs::write(dir.join("schema.json"), schema).unwrap();
}

#[test]
fn synthesize_measure_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let store = dir.path().join("store");

    // synthesize all subsets up to 2 columns: 4 singles + 6 pairs
    let out = bin()
        .args(["synthesize", "--all-subsets", "2"])
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--store")
        .arg(&store)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(store.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\": true") || manifest.contains("\"complete\":true"));
    let tables = std::fs::read_dir(&store)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .map(|x| x == "csv")
                .unwrap_or(false)
        })
        .count();
    assert_eq!(tables, 10);

    // measure from the store
    let report_path = dir.path().join("report.json");
    let out = bin()
        .arg("measure")
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--store")
        .arg(&store)
        .args(["--metrics", "univariate,correlation"])
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(&report_path).unwrap();
    assert!(report.contains("median_e_comp"));
    assert!(report.contains("median_diff"));

    // rerun of synthesize into a second store is byte-identical
    let store2 = dir.path().join("store2");
    let out = bin()
        .args(["synthesize", "--all-subsets", "2"])
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--store")
        .arg(&store2)
        .output()
        .unwrap();
    assert!(out.status.success());
    for entry in std::fs::read_dir(&store).unwrap() {
        let p1 = entry.unwrap().path();
        if p1.extension().map(|x| x == "csv").unwrap_or(false) {
            let p2 = store2.join(p1.file_name().unwrap());
            assert_eq!(
                std::fs::read(&p1).unwrap(),
                std::fs::read(&p2).unwrap(),
                "{p1:?} differs between reruns"
            );
        }
    }

    // compare the store against the original data posing as an
    // alternative technique's output
    let plot = dir.path().join("plot.csv");
    let out = bin()
        .arg("compare")
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--store")
        .arg(&store)
        .args(["--metrics", "univariate,correlation"])
        .arg("--alt-synthetic")
        .arg(dir.path().join("data.csv"))
        .arg("--out")
        .arg(&plot)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plot_text = std::fs::read_to_string(&plot).unwrap();
    assert!(plot_text.starts_with("measure,technique,value,improvement_factor"));
    assert!(plot_text.lines().count() >= 3);
}

#[test]
fn missing_table_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let store = dir.path().join("store");

    // store only holds single-column tables; pairwise metrics cannot run
    let out = bin()
        .args(["synthesize", "--all-subsets", "1"])
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--store")
        .arg(&store)
        .output()
        .unwrap();
    assert!(out.status.success());

    let out = bin()
        .arg("measure")
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--store")
        .arg(&store)
        .args(["--metrics", "correlation"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validation_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());

    let out = bin()
        .arg("measure")
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--synthetic")
        .arg(dir.path().join("data.csv"))
        .args(["--metrics", "not_a_metric"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .arg("measure")
        .arg("--input")
        .arg(dir.path().join("data.csv"))
        .arg("--schema")
        .arg(dir.path().join("schema.json"))
        .arg("--synthetic")
        .arg(dir.path().join("data.csv"))
        .args(["--policy", "bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
