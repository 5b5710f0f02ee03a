use std::path::Path;
use std::process::{Command, Output};

use surfaceformer::descriptor::read_lsd_dump;
use surfaceformer::mesh::{load_mesh, save_mesh};
use surfaceformer::mesh::primitives::{icosahedron, icosphere};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surfaceformer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn patches_lists_one_line_per_patch() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("ico.obj");
    save_mesh(&icosahedron(), &mesh).unwrap();
    let o = run(&["patches", "--input", p(&mesh)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "patch 0 center=0 size=20\n");
    let o = run(&["patches", "--input", p(&mesh), "--tf", "4"]);
    let lines: Vec<_> = stdout(&o).lines().map(str::to_owned).collect();
    assert!(lines.len() >= 5);
    assert!(lines[0].starts_with("patch 0 center=0 size=4"));
}

#[test]
fn eval_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.off");
    save_mesh(&icosphere(1), &a).unwrap();
    let o = run(&["eval", "--denoised", p(&a), "--gt", p(&a)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "E_a=0.00000 E_v=0.00000\n");

    let b = dir.path().join("b.off");
    let noisy = run(&["noise", "--input", p(&a), "--level", "0.3", "--seed", "2", "--output", p(&b)]);
    assert!(noisy.status.success());
    let o = run(&["eval", "--denoised", p(&b), "--gt", p(&a)]);
    let text = stdout(&o);
    let ea: f64 = text.split_whitespace().next().unwrap()[4..].parse().unwrap();
    assert!(ea > 1.0, "{text}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.obj");
    assert_eq!(run(&["patches", "--input", p(&missing)]).status.code(), Some(2));

    let bad = dir.path().join("mesh.stl");
    std::fs::write(&bad, "solid").unwrap();
    assert_eq!(run(&["patches", "--input", p(&bad)]).status.code(), Some(2));

    let broken = dir.path().join("broken.obj");
    std::fs::write(&broken, "v 0 0 0\nv 1 0 0\nf 1 2 3\n").unwrap();
    assert_eq!(run(&["patches", "--input", p(&broken)]).status.code(), Some(2));

    let a = dir.path().join("a.obj");
    let b = dir.path().join("b.obj");
    save_mesh(&icosphere(1), &a).unwrap();
    save_mesh(&icosphere(2), &b).unwrap();
    assert_eq!(run(&["eval", "--denoised", p(&a), "--gt", p(&b)]).status.code(), Some(3));

    assert_eq!(run(&["patches"]).status.code(), Some(2));
}

#[test]
fn lsd_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("m.obj");
    let out = dir.path().join("d.bin");
    save_mesh(&icosphere(2), &mesh).unwrap();
    let o = run(&[
        "lsd", "--input", p(&mesh), "--face", "17", "--out", p(&out), "--tf", "12", "--ps", "2", "--ts", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(&bytes[..4], b"LSD1");
    let dump = read_lsd_dump(&bytes[..]).unwrap();
    assert_eq!(dump.lsd.faces, 12);
    assert_eq!(dump.lsd.side, 6);
    assert_eq!(
        run(&["lsd", "--input", p(&mesh), "--face", "9999", "--out", p(&out)]).status.code(),
        Some(3)
    );
}

#[test]
fn train_and_denoise_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.obj");
    let noisy = dir.path().join("noisy.obj");
    save_mesh(&icosphere(1), &clean).unwrap();
    assert!(run(&["noise", "--input", p(&clean), "--level", "0.2", "--seed", "1", "--output", p(&noisy)])
        .status
        .success());
    let manifest = dir.path().join("pairs.txt");
    std::fs::write(&manifest, "noisy.obj clean.obj\n").unwrap();

    let train = |out: &Path| {
        let o = run(&[
            "train", "--manifest", p(&manifest), "--preset", "desk", "--d-model", "16", "--layers", "1",
            "--heads", "2", "--tf", "8", "--ps", "2", "--ts", "2", "--iters", "3", "--batch", "2", "--seed",
            "5", "--lr", "1e-3", "--out", p(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let c1 = dir.path().join("a.ckpt");
    let c2 = dir.path().join("b.ckpt");
    assert_eq!(train(&c1), train(&c2));

    let denoise = |out: &Path| {
        let o = run(&["denoise", "--input", p(&noisy), "--ckpt", p(&c1), "--nv", "5", "--output", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let d1 = dir.path().join("d1.obj");
    let d2 = dir.path().join("d2.obj");
    assert_eq!(denoise(&d1), denoise(&d2));
    let out = load_mesh(&d1).unwrap();
    assert_eq!(out.faces(), load_mesh(&noisy).unwrap().faces());

    let too_big = run(&["denoise", "--input", p(&noisy), "--ckpt", p(&c1), "--tf", "9", "--output", p(&d1)]);
    assert_eq!(too_big.status.code(), Some(3));
    let garbage = dir.path().join("bad.ckpt");
    std::fs::write(&garbage, b"nope").unwrap();
    let o = run(&["denoise", "--input", p(&noisy), "--ckpt", p(&garbage), "--output", p(&d1)]);
    assert_eq!(o.status.code(), Some(2));
}
