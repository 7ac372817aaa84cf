//! Drive the `puzzlegan` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn puzzlegan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puzzlegan"))
        .args(args)
        .current_dir(cwd)
        .env("PUZZLEGAN_DETERMINISTIC", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "[layout]\nkind = \"face_swap\"\n[model]\nhead_channels = 8\nmin_channels = 4\n\
[data]\nsynthetic_count = 16\n[train]\ntotal_steps = 4\nbatch_size = 4\ncheckpoint_every = 2\nseed = 1\n";

/// Train a tiny model into `dir/train`; returns the checkpoint path.
fn tiny_checkpoint(dir: &Path) -> String {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let o = puzzlegan(&["train", "--config", "tiny.toml", "--out", "train"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    "train/final.ckpt".into()
}

fn read_f32(path: &Path) -> Vec<f32> {
    fs::read(path)
        .unwrap()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

#[test]
fn layout_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let canonical = puzzlegan::layout::canonical_layout(puzzlegan::layout::LayoutKind::FacialParts);
    fs::write(d.join("ok.txt"), canonical.to_text()).unwrap();
    let o = puzzlegan(&["layout-check", "--layout", "ok.txt"], d);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("1 1 1 1 1 1 1 1\n"));

    fs::write(
        d.join("ragged.txt"),
        "grid_height: 2\ngrid_width: 2\nnum_parts: 1\ngrid:\n1 1\n1\n",
    )
    .unwrap();
    let o = puzzlegan(&["layout-check", "--layout", "ragged.txt"], d);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));

    fs::write(
        d.join("empty.txt"),
        "grid_height: 1\ngrid_width: 2\nnum_parts: 3\ngrid:\n1 2\n",
    )
    .unwrap();
    let o = puzzlegan(&["layout-check", "--layout", "empty.txt"], d);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("part 3"), "{}", stderr(&o));

    let o = puzzlegan(&["layout-check", "--layout", "missing.txt"], d);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_config_and_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[train]\nlearning_rate = 1\n").unwrap();
    let o = puzzlegan(&["train", "--config", "bad.toml", "--out", "x"], d);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("learning_rate"));

    let o = puzzlegan(&["sample", "--checkpoint", "nope.ckpt", "--out", "s"], d);
    assert_eq!(code(&o), 2);
    let o = puzzlegan(&["sample", "--bogus-flag"], d);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_sample_swap_eval_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ck = tiny_checkpoint(d);
    assert!(d.join("train/checkpoints/step_0000002.ckpt").exists());
    assert!(d.join("train/resolved_config.toml").exists());
    assert_eq!(
        fs::read_to_string(d.join("train/train_log.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    // Replaying the snapshot reproduces the checkpoint bit for bit.
    let o = puzzlegan(&["replay", "train/resolved_config.toml", "--out", "again"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(d.join("train/final.ckpt")).unwrap(),
        fs::read(d.join("again/final.ckpt")).unwrap()
    );

    let o = puzzlegan(
        &[
            "sample",
            "--checkpoint",
            &ck,
            "--n",
            "4",
            "--seed",
            "2",
            "--out",
            "samples",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_f32(&d.join("samples/samples.f32")).len(), 4 * 3 * 32 * 32);
    let o = puzzlegan(&["replay", "samples/resolved_config.toml", "--out", "samples2"], d);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(d.join("samples/samples.png")).unwrap(),
        fs::read(d.join("samples2/samples.png")).unwrap()
    );

    // No parts swapped: the mix column equals the target column.
    let o = puzzlegan(&["swap", "--checkpoint", &ck, "--n", "2", "--out", "swap0"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let img = 3 * 32 * 32;
    let v = read_f32(&d.join("swap0/swap.f32"));
    for row in v.chunks(3 * img) {
        assert_eq!(&row[..img], &row[2 * img..]);
        assert_ne!(&row[..img], &row[img..2 * img]);
    }
    // Swapping every part gives the reference.
    let o = puzzlegan(
        &[
            "swap",
            "--checkpoint",
            &ck,
            "--n",
            "1",
            "--parts",
            "1,2",
            "--out",
            "swap_all",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = read_f32(&d.join("swap_all/swap.f32"));
    assert_eq!(&v[img..2 * img], &v[2 * img..]);
    let o = puzzlegan(&["swap", "--checkpoint", &ck, "--parts", "3", "--out", "swap_bad"], d);
    assert_eq!(code(&o), 1);

    let o = puzzlegan(
        &[
            "eval-regions",
            "--checkpoint",
            &ck,
            "--part",
            "1",
            "--n",
            "5",
            "--out",
            "eval",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(d.join("eval/region_stats.txt")).unwrap();
    assert!(table.contains("interlocking") && table.contains("regions=exact") && table.contains("regions=block"));
    assert!(d.join("eval/heatmap_part1.png").exists());
    let grid = fs::read_to_string(d.join("eval/heatmap_part1.txt")).unwrap();
    assert_eq!(grid.lines().count(), 33);

    let o = puzzlegan(&["influence", "--checkpoint", &ck, "--out", "inf"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["exact/part_count.png", "exact/influence.txt", "block/part2_inside.png"] {
        assert!(d.join("inf").join(f).exists(), "{f}");
    }
}

#[test]
fn influence_on_desk_layout_reports_shared_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let o = puzzlegan(&["influence", "--layout", "facial_parts", "--out", "inf"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(!out.contains("  1 parts:"), "{out}");
    assert!(out.contains("  2 parts:"));
}

#[test]
fn synth_ingest_and_fid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = puzzlegan(&["synth", "--n", "12", "--resolution", "48", "--out", "faces"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = puzzlegan(&["ingest", "faces", "--resolution", "32", "--out", "store"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("store/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["image_count"], 12);
    assert_eq!(manifest["resolution"], 32);

    let ck = tiny_checkpoint(d);
    for ex in ["pixel_downsample", "discriminator_penultimate"] {
        let out = format!("fid_{ex}");
        let o = puzzlegan(
            &[
                "fid",
                "--checkpoint",
                &ck,
                "--data",
                "store/store.bin",
                "--extractor",
                ex,
                "--n",
                "12",
                "--out",
                &out,
            ],
            d,
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let rec: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(&out).join("fid.json")).unwrap()).unwrap();
        assert!(rec["frechet_distance"].as_f64().unwrap() > 0.0);
        assert_eq!(rec["extractor"], ex);
    }
    fs::write(d.join("a.txt"), "0 0\n1 1\n2 0\n").unwrap();
    let o = puzzlegan(
        &[
            "fid",
            "--checkpoint",
            &ck,
            "--data",
            "store/store.bin",
            "--extractor",
            "external:toy",
            "--features",
            "a.txt",
            "a.txt",
            "--out",
            "fid_ext",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("0.000000")), "{}", stdout(&o));
    let o = puzzlegan(
        &[
            "fid",
            "--checkpoint",
            &ck,
            "--data",
            "store/store.bin",
            "--extractor",
            "inception",
            "--out",
            "f",
        ],
        d,
    );
    assert_eq!(code(&o), 1);
}
