//! End-to-end checks of the command-line surface beyond the pipeline
//! covered by the acceptance suite: demo subcommands, image ingestion
//! with the crop policy, and error reporting.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mrtensor")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mrt_cli_{tag}_{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn demo_closedness_final_line() {
    let out = Command::new(bin())
        .args(["demo", "closedness", "--n-max", "1e6"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let last = text.lines().last().unwrap();
    let fields: Vec<&str> = last.split_whitespace().collect();
    assert_eq!(fields[0], "1000000");
    let err_closed: f64 = fields[1].parse().unwrap();
    let err_numeric: f64 = fields[2].parse().unwrap();
    let coarse: f64 = fields[3].parse().unwrap();
    assert!(err_closed < 1e-6 && err_numeric < 1e-6);
    assert!(coarse >= 2e6);
}

#[test]
fn demo_multiscale_and_bound_run() {
    let out = Command::new(bin())
        .args(["demo", "multiscale", "--d", "2", "--n", "32", "--csv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("n,d,"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("32,2,"));

    let out = Command::new(bin())
        .args(["demo", "bound", "--d", "3", "--n", "64"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("bound"));
    assert!(text.contains("9.65"));
}

#[test]
fn demo_convergence_csv_shape() {
    let out = Command::new(bin())
        .args(["demo", "convergence", "--n", "64", "--seed", "3", "--csv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "level,iteration,error");
    // Three active levels (3, 5, 6) with 150 iterations each.
    assert_eq!(lines.count(), 3 * 150);
}

#[test]
fn pgm_compress_with_crop_policy() {
    let dir = temp_dir("pgm");
    // 6x10 image: not divisible by 2^2; --crop trims to 4x8.
    let mut img = b"P5 10 6 255\n".to_vec();
    img.extend((0..60u8).map(|i| i.wrapping_mul(4)));
    let img_path = dir.join("img.pgm");
    fs::write(&img_path, &img).unwrap();
    let archive = dir.join("img.mrtc");

    // Without a policy the divisibility failure is reported.
    let out = Command::new(bin())
        .args([
            "compress",
            "--input",
            img_path.to_str().unwrap(),
            "--base-format",
            "tt",
            "--bs",
            "2",
            "--levels",
            "2",
            "--rank",
            "2",
            "--max-iter",
            "2",
            "--output",
            archive.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("divisible"), "stderr: {msg}");

    let out = Command::new(bin())
        .args([
            "compress",
            "--input",
            img_path.to_str().unwrap(),
            "--base-format",
            "tt",
            "--bs",
            "2",
            "--levels",
            "2",
            "--rank",
            "2",
            "--max-iter",
            "2",
            "--crop",
            "--output",
            archive.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("cropped [6, 10] -> [4, 8]"), "stdout: {text}");

    let info = Command::new(bin())
        .args(["info", "--input", archive.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(info.status.success());
    let text = String::from_utf8_lossy(&info.stdout);
    assert!(text.contains("base_shape: [4, 8]"));
    assert!(text.contains("compression_ratio:"));
    assert!(text.contains("stability_margin:"));

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_inputs_fail_with_nonzero_exit() {
    let dir = temp_dir("bad");
    let junk = dir.join("junk.bin");
    fs::write(&junk, b"garbage").unwrap();

    let out = Command::new(bin())
        .args([
            "compress",
            "--input",
            junk.to_str().unwrap(),
            "--base-format",
            "tt",
            "--bs",
            "2",
            "--rank",
            "1",
            "--max-iter",
            "1",
            "--output",
            dir.join("x.mrtc").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // Rank vector of the wrong length names the expected count.
    let t = mrtensor::DenseTensor::new(vec![4, 4], vec![1.0; 16]).unwrap();
    let input = dir.join("t.mrt0");
    mrtensor::io::write_tensor(&input, &t).unwrap();
    let out = Command::new(bin())
        .args([
            "compress",
            "--input",
            input.to_str().unwrap(),
            "--base-format",
            "tt",
            "--bs",
            "2",
            "--levels",
            "2",
            "--ranks",
            "1,2",
            "--max-iter",
            "1",
            "--output",
            dir.join("t.mrtc").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains('3'), "stderr: {msg}");

    fs::remove_dir_all(&dir).ok();
}
