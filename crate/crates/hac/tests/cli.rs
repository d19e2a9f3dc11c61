use std::path::Path;
use std::process::{Command, Output};

fn hac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hac")).args(args).output().expect("spawn hac")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.scene");
    assert_eq!(hac(&["inspect", arg(&missing)]).status.code(), Some(3));
    assert_eq!(hac(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(hac(&["synth"]).status.code(), Some(2));
    assert_eq!(hac(&["--help"]).status.code(), Some(0));

    let junk = dir.path().join("junk.hac");
    std::fs::write(&junk, b"not a container at all").unwrap();
    let out = hac(&["inspect", arg(&junk)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!out.stderr.is_empty());
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let (scene, model, blob, decoded, refined) = (p("a.scene"), p("a.model"), p("a.hac"), p("b.scene"), p("r.scene"));

    let ok = |args: &[&str]| {
        let out = hac(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };

    ok(&["synth", "-o", arg(&scene), "--anchors", "400", "--dim-feat", "8", "--offsets", "3", "--seed", "5"]);
    let fit = ok(&[
        "fit", arg(&scene), "-o", arg(&model), "--iters", "30", "--grid-preset", "small", "--mode", "joint", "--refined", arg(&refined),
        "--deterministic",
    ]);
    assert!(fit.contains("bits/param pooled"));
    let history = std::fs::read_to_string(format!("{}.history.csv", model.display())).unwrap();
    assert!(history.lines().count() >= 2);
    assert!(refined.exists());

    ok(&["encode", arg(&scene), arg(&model), "-o", arg(&blob), "--report"]);
    assert!(ok(&["verify", arg(&scene), arg(&model)]).starts_with("ok:"));

    let size = std::fs::metadata(&blob).unwrap().len();
    let inspection: serde_json::Value = serde_json::from_str(&ok(&["inspect", arg(&blob)])).unwrap();
    let sections: u64 = inspection["sections"].as_array().unwrap().iter().map(|s| s["bytes"].as_u64().unwrap()).sum();
    assert_eq!(sections + inspection["header_bytes"].as_u64().unwrap(), size);
    assert_eq!(inspection["total_bytes"].as_u64().unwrap(), size);

    ok(&["decode", arg(&blob), "-o", arg(&decoded)]);
    let kept = inspection["kept_anchors"].as_u64().unwrap();
    assert_eq!(hac::sceneio::load(&decoded).unwrap().n as u64, kept);

    let csv = ok(&["bitmap", arg(&scene), arg(&model), "--voxels", "8"]);
    assert!(csv.lines().count() > 1);
    let records: serde_json::Value = serde_json::from_str(&ok(&["bitmap", arg(&scene), arg(&model), "--voxels", "8", "--json"])).unwrap();
    assert!(!records.as_array().unwrap().is_empty());

    assert!(ok(&["report", arg(&blob)]).contains("Per-param size (bit)"));
    let report: serde_json::Value = serde_json::from_str(&ok(&["report", arg(&blob), "--json"])).unwrap();
    assert_eq!(report["total_bytes"].as_u64().unwrap(), size);
}
