use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prorandconv::interop::augment_array;
use prorandconv::io::{read_png, write_png, TensorDump};
use prorandconv::{AugmentConfig, Image, RngStream};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prorandconv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noise_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
    let v = RngStream::new(seed).gaussian_draw(c * h * w, 0.5).unwrap();
    Image::new(
        c,
        h,
        w,
        v.iter().map(|&x| (x as f32).clamp(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

fn png_dir(root: &Path) -> PathBuf {
    let dir = root.join("in");
    fs::create_dir_all(&dir).unwrap();
    for (i, name) in ["a", "b"].iter().enumerate() {
        let png = write_png(&noise_image(3, 12, 16, i as u64)).unwrap();
        fs::write(dir.join(format!("{name}.png")), png).unwrap();
    }
    dir
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn augment_names_outputs_by_seed_reps_and_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let input = png_dir(tmp.path());
    let out = tmp.path().join("out");
    ok(&[
        "augment",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--seed",
        "5",
        "--reps",
        "3",
        "--count",
        "2",
    ]);
    let names: Vec<String> = listing(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        [
            "a_s5_L3_v0.png",
            "a_s5_L3_v1.png",
            "b_s5_L3_v0.png",
            "b_s5_L3_v1.png",
            "resolved_config.json"
        ]
    );
    let img = read_png(&fs::read(out.join("a_s5_L3_v0.png")).unwrap()).unwrap();
    assert_eq!(img.shape(), (3, 12, 16));
    let resolved: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 5);
}

#[test]
fn augment_modes_differ_and_repeat() {
    let tmp = tempfile::tempdir().unwrap();
    let input = png_dir(tmp.path());
    let mut seen = Vec::new();
    for mode in [
        "prorandconv",
        "randconv",
        "progressive-same",
        "progressive-diff",
    ] {
        let mut runs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{mode}-{run}"));
            ok(&[
                "augment",
                "--input",
                s(&input),
                "--output",
                s(&out),
                "--seed",
                "9",
                "--mode",
                mode,
            ]);
            runs.push(listing(&out));
        }
        assert_eq!(runs[0], runs[1], "{mode} is not reproducible");
        let a = runs[0].iter().find(|(n, _)| n.starts_with("a_")).unwrap();
        seen.push(a.1.clone());
    }
    for i in 0..seen.len() {
        for j in i + 1..seen.len() {
            assert_ne!(seen[i], seen[j], "modes {i} and {j} agree");
        }
    }
}

#[test]
fn dump_input_matches_array_entry_point() {
    let tmp = tempfile::tempdir().unwrap();
    let (n, c, h, w) = (2, 3, 10, 8);
    let data: Vec<f32> = (0..n)
        .flat_map(|i| noise_image(c, h, w, 40 + i as u64).into_data())
        .collect();
    let dims = vec![n as u32, c as u32, h as u32, w as u32];
    let input = tmp.path().join("batch.prct");
    fs::write(
        &input,
        TensorDump::new(dims.clone(), data.clone())
            .unwrap()
            .to_bytes(),
    )
    .unwrap();
    let out = tmp.path().join("out");
    ok(&[
        "augment",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--seed",
        "21",
    ]);

    let json = serde_json::to_string(&AugmentConfig::default()).unwrap();
    let (expected, reps) = augment_array(&data, [n, c, h, w], &json, 21).unwrap();
    let written = out.join(format!("batch_s21_L{reps}_v0.prct"));
    let dump = TensorDump::from_bytes(&fs::read(written).unwrap()).unwrap();
    assert_eq!(dump.dims, dims);
    assert_eq!(dump.data, expected);
}

#[test]
fn grid_lays_out_rows_and_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let input = png_dir(tmp.path()).join("a.png");
    let out = tmp.path().join("grid.png");
    ok(&[
        "grid",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--sweep",
        "reps",
        "--values",
        "1,2,5",
        "--rows",
        "2",
        "--seed",
        "1",
    ]);
    let grid = read_png(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(grid.shape(), (3, 2 * 12 + 2, 3 * 16 + 2 * 2));
    assert!(tmp.path().join("resolved_config.json").is_file());
}

#[test]
fn grf_writes_standardized_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grf");
    ok(&[
        "grf",
        "--size",
        "16",
        "24",
        "--alpha",
        "4",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    let dump = TensorDump::from_bytes(&fs::read(out.join("grf.prct")).unwrap()).unwrap();
    assert_eq!(dump.dims, vec![16, 24]);
    let n = dump.data.len() as f64;
    let mean = dump.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = dump
        .data
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    assert!(
        mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5,
        "{mean} {var}"
    );
    let png = read_png(&fs::read(out.join("grf.png")).unwrap()).unwrap();
    assert_eq!((png.height(), png.width()), (16, 24));
}

#[test]
fn invalid_invocations_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let input = png_dir(tmp.path());
    let out = tmp.path().join("out");
    let missing = tmp.path().join("missing");

    let err = fails(&["augment", "--input", s(&missing), "--output", s(&out)]);
    assert!(err.contains("does not exist"), "{err}");

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"augment": {"kernel_size": 4}}"#).unwrap();
    let err = fails(&[
        "augment",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--config",
        s(&cfg),
    ]);
    assert!(err.contains("kernel_size"), "{err}");

    fs::write(&cfg, r#"{"augment": {"no_such_field": 1}}"#).unwrap();
    fails(&[
        "augment",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--config",
        s(&cfg),
    ]);

    fails(&[
        "augment",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--reps",
        "0",
    ]);
    fails(&[
        "augment",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--mode",
        "randconv",
        "--reps",
        "2",
    ]);
    fails(&["grf", "--size", "0", "4", "--alpha", "1", "--out", s(&out)]);
    fails(&["grf", "--size", "4", "4", "--alpha", "-1", "--out", s(&out)]);
    fails(&["train", "--data", s(&missing), "--out", s(&out)]);
    fails(&[
        "train",
        "--data",
        s(&missing),
        "--out",
        s(&out),
        "--ablation",
        "nonsense",
    ]);
}
