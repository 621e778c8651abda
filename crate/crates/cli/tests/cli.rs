use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn edms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edms"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = edms(args);
    assert!(
        out.status.success(),
        "edms {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_digest(dir: &Path) -> Vec<u8> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        h.update(n.file_name().unwrap().to_str().unwrap().as_bytes());
        h.update(fs::read(&n).unwrap());
    }
    h.finalize().to_vec()
}

/// Small dataset plus untrained weights.
fn fixture(tmp: &TempDir) -> (PathBuf, PathBuf) {
    let data = tmp.path().join("data");
    let weights = tmp.path().join("w.edmw");
    ok(&[
        "gen-data",
        "--seed",
        "3",
        "--count",
        "2",
        "--size",
        "16",
        "--out",
        s(&data),
    ]);
    ok(&["init-weights", "--seed", "5", "--out", s(&weights)]);
    (data, weights)
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = |out: &Path| {
        ok(&[
            "gen-data",
            "--seed",
            "1",
            "--count",
            "4",
            "--size",
            "32",
            "--out",
            s(out),
        ]);
    };
    args(&a);
    args(&b);
    assert_eq!(fs::read_dir(&a).unwrap().count(), 8);
    assert_eq!(dir_digest(&a), dir_digest(&b));
    args(&a);
    assert_eq!(dir_digest(&a), dir_digest(&b));

    let empty = tmp.path().join("empty");
    ok(&[
        "gen-data",
        "--seed",
        "1",
        "--count",
        "0",
        "--out",
        s(&empty),
    ]);
    assert_eq!(fs::read_dir(&empty).unwrap().count(), 0);
}

#[test]
fn lossless_round_trip_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (data, weights) = fixture(&tmp);
    let input = data.join("0000.ppm");
    let packed = tmp.path().join("x.edms");
    let restored = tmp.path().join("x.ppm");
    let stdout = ok(&[
        "encode",
        "--input",
        s(&input),
        "--weights",
        s(&weights),
        "--q",
        "1",
        "--out",
        s(&packed),
    ]);
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next().unwrap(),
        "image,variant,q,bpp,psnr_db,ms_ssim,enc_s,dec_s,synth_hash8"
    );
    assert!(lines.next().unwrap().contains(",inf,"));
    ok(&[
        "decode",
        "--input",
        s(&packed),
        "--weights",
        s(&weights),
        "--out",
        s(&restored),
    ]);
    assert_eq!(fs::read(&input).unwrap(), fs::read(&restored).unwrap());

    // encoding is deterministic
    let again = tmp.path().join("y.edms");
    ok(&[
        "encode",
        "--input",
        s(&input),
        "--weights",
        s(&weights),
        "--q",
        "1",
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&packed).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn wrong_weights_exit_with_format_code() {
    let tmp = TempDir::new().unwrap();
    let (data, weights) = fixture(&tmp);
    let other = tmp.path().join("other.edmw");
    ok(&["init-weights", "--seed", "6", "--out", s(&other)]);
    let packed = tmp.path().join("x.edms");
    ok(&[
        "encode",
        "--input",
        s(&data.join("0001.ppm")),
        "--weights",
        s(&weights),
        "--q",
        "4",
        "--out",
        s(&packed),
    ]);
    let out = edms(&[
        "decode",
        "--input",
        s(&packed),
        "--weights",
        s(&other),
        "--out",
        s(&tmp.path().join("z.ppm")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));

    let mut tampered = fs::read(&weights).unwrap();
    let n = tampered.len();
    tampered[n / 2] ^= 1;
    let bad = tmp.path().join("bad.edmw");
    fs::write(&bad, tampered).unwrap();
    let out = edms(&[
        "decode",
        "--input",
        s(&packed),
        "--weights",
        s(&bad),
        "--out",
        s(&tmp.path().join("z.ppm")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_reports_match_and_mismatch() {
    let tmp = TempDir::new().unwrap();
    let (data, weights) = fixture(&tmp);
    let input = data.join("0000.ppm");
    let flagged = tmp.path().join("f.edms");
    ok(&[
        "encode",
        "--input",
        s(&input),
        "--weights",
        s(&weights),
        "--q",
        "2",
        "--out",
        s(&flagged),
        "--embed-synth-hash",
        "--no-enhance",
    ]);
    let report = ok(&["verify", "--input", s(&flagged), "--weights", s(&weights)]);
    assert_eq!(report.lines().next(), Some("match"));

    let mut bytes = fs::read(&flagged).unwrap();
    bytes[29] ^= 0x04;
    let broken = tmp.path().join("b.edms");
    fs::write(&broken, &bytes).unwrap();
    let out = edms(&["verify", "--input", s(&broken), "--weights", s(&weights)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("mismatch"));
    let out = edms(&[
        "decode",
        "--input",
        s(&broken),
        "--weights",
        s(&weights),
        "--out",
        s(&tmp.path().join("b.ppm")),
    ]);
    assert_ne!(code(&out), 0);

    let plain = tmp.path().join("p.edms");
    ok(&[
        "encode",
        "--input",
        s(&input),
        "--weights",
        s(&weights),
        "--out",
        s(&plain),
    ]);
    assert_eq!(
        code(&edms(&[
            "verify",
            "--input",
            s(&plain),
            "--weights",
            s(&weights)
        ])),
        1
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&edms(&["encode"])), 1);
    assert_eq!(code(&edms(&["no-such-command"])), 1);
    assert_eq!(
        code(&edms(&["gen-data", "--count", "x", "--out", "/tmp/x"])),
        1
    );
    assert_eq!(code(&edms(&["--help"])), 0);
}

#[test]
fn training_stages_follow_their_order() {
    let tmp = TempDir::new().unwrap();
    let (data, _) = fixture(&tmp);
    let seg = tmp.path().join("seg.edmw");
    let base = tmp.path().join("base.edmw");
    let full = tmp.path().join("full.edmw");
    let common = [
        "--data",
        s(&data),
        "--epochs",
        "1",
        "--batch",
        "2",
        "--lr",
        "1e-3",
        "--seed",
        "2",
    ];
    let train = |stage: &str, extra: &[&str]| {
        let mut args = vec!["train", "--stage", stage];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        edms(&args)
    };

    let early = train("smapnet", &["--weights-out", s(&full)]);
    assert_ne!(code(&early), 0);
    assert!(String::from_utf8_lossy(&early.stderr).contains("needs trained"));

    let out = train("segmenter", &["--weights-out", s(&seg)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let digest = String::from_utf8(out.stdout).unwrap();
    let rerun = train(
        "segmenter",
        &["--weights-out", s(&tmp.path().join("seg2.edmw"))],
    );
    assert_eq!(String::from_utf8(rerun.stdout).unwrap(), digest);
    let log = fs::read_to_string(tmp.path().join("seg.loss.csv")).unwrap();
    assert!(log.starts_with("epoch,stage,loss\n1,segmenter,"));

    let out = train(
        "smapnet",
        &["--weights-in", s(&seg), "--weights-out", s(&full)],
    );
    assert_ne!(code(&out), 0);
    assert!(train(
        "base",
        &["--weights-in", s(&seg), "--weights-out", s(&base)]
    )
    .status
    .success());
    assert!(train(
        "smapnet",
        &["--weights-in", s(&base), "--weights-out", s(&full)]
    )
    .status
    .success());

    let packed = tmp.path().join("t.edms");
    ok(&[
        "encode",
        "--input",
        s(&data.join("0000.ppm")),
        "--weights",
        s(&full),
        "--q",
        "1",
        "--out",
        s(&packed),
        "--embed-synth-hash",
    ]);
    assert!(ok(&["verify", "--input", s(&packed), "--weights", s(&full)]).starts_with("match"));
}

fn strip_timings(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let mut cells: Vec<String> = l.split(',').map(str::to_string).collect();
            cells.drain(6..8);
            cells
        })
        .collect()
}

#[test]
fn eval_and_rd_curve_csv() {
    let tmp = TempDir::new().unwrap();
    let (data, weights) = fixture(&tmp);
    let csv = tmp.path().join("eval.csv");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--weights",
        s(&weights),
        "--q-list",
        "1",
        "--csv",
        s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let rows = strip_timings(&text);
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[4] == "inf"));
    assert_eq!(rows[0][1], "with-enhancement");
    assert_eq!(rows[1][1], "without-enhancement");
    assert_eq!(rows[0][0], "0000");
    assert_eq!(rows[2][0], "0001");

    let serial = tmp.path().join("serial.csv");
    ok(&[
        "--jobs",
        "1",
        "eval",
        "--data",
        s(&data),
        "--weights",
        s(&weights),
        "--q-list",
        "1",
        "--csv",
        s(&serial),
    ]);
    assert_eq!(strip_timings(&fs::read_to_string(&serial).unwrap()), rows);

    let rd = tmp.path().join("rd.csv");
    ok(&[
        "rd-curve",
        "--data",
        s(&data),
        "--weights",
        s(&weights),
        "--q-list",
        "1,4,16",
        "--variants",
        "without",
        "--csv",
        s(&rd),
    ]);
    let text = fs::read_to_string(&rd).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,q,images,bpp,psnr_db,ms_ssim,enc_s,dec_s"
    );
    let bpp: Vec<f64> = lines
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            assert_eq!(c[0], "without-enhancement");
            assert_eq!(c[2], "2");
            c[3].parse().unwrap()
        })
        .collect();
    assert_eq!(bpp.len(), 3);
    assert!(bpp.windows(2).all(|w| w[1] < w[0]), "{bpp:?}");
}
