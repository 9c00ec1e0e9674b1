use std::path::Path;
use std::process::{Command, Output};

fn cne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cne")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_BLOBS: &str = "blobs:n_per_class=60,n_classes=3,dim=8,separation=20,seed=1";

#[test]
fn embed_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = cne(&["embed", "--data", "blobs", "--loss", "umap", "--out", path(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["embedding.csv", "training_log.jsonl", "config.toml", "quality.json", "plot.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let quality = std::fs::read_to_string(out.join("quality.json")).unwrap();
    let acc: f64 = quality
        .lines()
        .find(|l| l.contains("\"knn_accuracy\""))
        .and_then(|l| l.split(':').nth(1))
        .map(|v| v.trim().trim_end_matches(',').parse().unwrap())
        .unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    let log = std::fs::read_to_string(out.join("training_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 250);
    assert!(log.lines().next().unwrap().contains("\"mean_loss\""));
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let res = cne(&[
        "embed", "--data", SMALL_BLOBS, "--loss", "tscne", "--log-ratio", "--epochs", "15", "--seed", "9", "--out",
        path(&first),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let cfg = first.join("config.toml");
    let res = cne(&["embed", "--config", path(&cfg), "--out", path(&second)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let a = std::fs::read(first.join("embedding.csv")).unwrap();
    let b = std::fs::read(second.join("embedding.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("id,z1,z2,label"));
}

#[test]
fn parametric_mode_saves_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let res = cne(&[
        "embed", "--data", SMALL_BLOBS, "--mode", "parametric", "--epochs", "5", "--plot", "false", "--out",
        path(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("encoder.bin").is_file());
    assert!(!out.join("plot.svg").exists());
}

#[test]
fn supervised_loss_on_unlabeled_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let mut text = String::from("a,b,c\n");
    for i in 0..30 {
        text += &format!("{},{},{}\n", i, i * i % 7, i % 5);
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("o");
    let res = cne(&["embed", "--data", path(&csv), "--loss", "tscne", "--out", path(&out)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("label"));
    // rejected before training started
    assert!(!out.join("training_log.jsonl").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&cne(&["embed", "--no-such-flag"])), 2);
    assert_eq!(code(&cne(&["embed", "--data", "blobs", "--loss", "nope"])), 2);
    assert_eq!(code(&cne(&["embed", "--data", "blobs", "--lr", "-1"])), 2);
    assert_eq!(code(&cne(&["frobnicate"])), 2);
}

#[test]
fn gradcheck_single_loss() {
    let res = cne(&["gradcheck", "--loss", "umap", "--batches", "3"]);
    assert_eq!(code(&res), 0);
    let text = stdout(&res);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("umap") && text.contains("ok"));
}

#[test]
fn gradcheck_every_kind_passes() {
    let res = cne(&["gradcheck", "--batches", "2"]);
    assert_eq!(code(&res), 0, "{}", stdout(&res));
    let text = stdout(&res);
    for kind in [
        "tsne", "umap", "nce", "trimap", "pacmap", "infonce", "sscl", "snn", "supcon", "sup_snn", "tscne",
    ] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(kind)), "{kind} not checked");
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let res = cne(&["gradcheck", "--loss", "infonce", "--batches", "2", "--corrupt-gradient", "0.01"]);
    assert_eq!(code(&res), 3);
    assert!(stdout(&res).contains("FAIL"));
}

#[test]
fn bench_table_has_row_per_loss_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let res = cne(&[
        "bench", "--data", SMALL_BLOBS, "--seed", "0,1,2", "--epochs", "5", "--jobs", "2", "--plot", "false", "--out",
        path(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let table = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    for col in ["loss", "seed", "knn_recall", "knn_accuracy", "silhouette", "knn_recall_mean", "knn_recall_std"] {
        assert!(header.contains(&col), "missing column {col}");
    }
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 15);
    let losses: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(losses.len(), 5);
    assert!(out.join("bench.json").is_file());
    assert!(out.join("umap-seed2").join("embedding.csv").is_file());
}

#[test]
fn empty_bench_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = cne(&["bench", "--data", SMALL_BLOBS, "--loss", "", "--out", path(dir.path())]);
    assert_eq!(code(&res), 2);
}

#[test]
fn gen_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("moons.csv");
    let res = cne(&["gen", "--data", "moons:n=50,noise=0.1,seed=3", "--out", path(&csv)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 51);

    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    assert_eq!(code(&cne(&["plot", "--data", path(&csv), "--out", path(&a)])), 0);
    assert_eq!(code(&cne(&["plot", "--data", path(&csv), "--out", path(&b)])), 0);
    let svg = std::fs::read(&a).unwrap();
    assert_eq!(svg, std::fs::read(&b).unwrap());
    let svg = String::from_utf8(svg).unwrap();
    assert_eq!(svg.matches("<circle").count(), 50);
}

#[test]
fn plot_of_three_points_uses_two_colors() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("e.csv");
    std::fs::write(&csv, "id,z1,z2,label\na,0,0,x\nb,1,0,x\nc,0,1,y\n").unwrap();
    let svg = dir.path().join("e.svg");
    assert_eq!(code(&cne(&["plot", "--data", path(&csv), "--out", path(&svg)])), 0);
    let svg = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(svg.matches("<circle").count(), 3);
    let fills: std::collections::BTreeSet<&str> =
        svg.split("fill=\"").skip(1).filter_map(|s| s.split('"').next()).filter(|f| f.starts_with('#')).collect();
    assert_eq!(fills.len(), 2, "{fills:?}");
}
