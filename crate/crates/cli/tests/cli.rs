use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use strata::backend::wire::read_response;
use strata::project::{load_png, load_project, save_png};
use strata::ImageBuffer;

fn strata() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_strata"));
    cmd.env_remove("GIMPML_BACKEND").env("RUST_LOG", "info");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_image(
    dir: &Path,
    name: &str,
    w: u32,
    h: u32,
    c: usize,
    f: impl Fn(u32, u32, usize) -> u8,
) -> PathBuf {
    let mut bytes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes.push(f(x, y, ch));
            }
        }
    }
    let path = dir.join(name);
    save_png(&ImageBuffer::from_u8(w, h, c, &bytes).unwrap(), &path).unwrap();
    path
}

fn sample(dir: &Path) -> PathBuf {
    write_image(dir, "in.png", 16, 12, 3, |x, y, c| {
        ((x * 37 + y * 11 + c as u32 * 91) % 256) as u8
    })
}

fn dead_port() -> u16 {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

#[test]
fn kmeans_quantizes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    for out in [&a, &b] {
        let o = run(strata()
            .args(["tool", "kmeans", "--k", "3", "--seed", "7"])
            .arg(&input)
            .arg(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let img = load_png(&a).unwrap();
    let mut colors: Vec<&[f32]> = img.pixels().collect();
    colors.sort_by(|x, y| x.partial_cmp(y).unwrap());
    colors.dedup();
    assert!(colors.len() <= 3, "{} colors", colors.len());
}

#[test]
fn invalid_trimap_exits_1_and_cites_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    let trimap = write_image(dir.path(), "t.png", 16, 12, 1, |x, y, _| {
        if (x, y) == (4, 7) {
            127
        } else {
            128
        }
    });
    let o = run(strata()
        .args(["tool", "matting"])
        .arg(&input)
        .arg(&trimap)
        .arg(dir.path().join("o.png")));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("127") && err.contains("(4, 7)"), "{err}");
}

#[test]
fn matting_writes_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    let trimap = write_image(dir.path(), "t.png", 16, 12, 3, |x, _, _| {
        [0, 128, 255][(x % 3) as usize]
    });
    let out = dir.path().join("alpha.png");
    let o = run(strata()
        .args(["tool", "matting"])
        .arg(&input)
        .arg(&trimap)
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let alpha = load_png(&out).unwrap();
    assert_eq!(alpha.channels(), 1);
    assert_eq!(alpha.pixel(0, 0), &[0.0]);
    assert_eq!(alpha.pixel(2, 0), &[1.0]);
}

#[test]
fn superres_force_cpu_logs_device() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    let out = dir.path().join("big.png");
    let o = run(strata()
        .args(["tool", "superres", "--scale", "4", "--force-cpu"])
        .arg(&input)
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("device cpu"), "{}", stderr(&o));
    let big = load_png(&out).unwrap();
    assert_eq!((big.width(), big.height()), (64, 48));
}

#[test]
fn monodepth_writes_16_bit_png() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    let out = dir.path().join("depth.png");
    let o = run(strata().args(["tool", "monodepth"]).arg(&input).arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(&out).unwrap();
    // IHDR bit depth byte.
    assert_eq!(bytes[24], 16);
    let d = strata::project::load_disparity_png(&out).unwrap();
    assert_eq!((d.width(), d.height()), (16, 12));
}

#[test]
fn relight_accepts_16_bit_disparity() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    let depth = dir.path().join("depth.png");
    assert!(
        run(strata().args(["tool", "monodepth"]).arg(&input).arg(&depth))
            .status
            .success()
    );
    let out = dir.path().join("relit.png");
    let o = run(strata()
        .args(["tool", "relight", "--strength", "0"])
        .arg(&input)
        .arg(&depth)
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_png(&out).unwrap(), load_png(&input).unwrap());
}

#[test]
fn emit_builtin_relight() {
    let o = run(strata().args(["pipeline", "emit-builtin", "relight"]));
    assert!(o.status.success());
    let spec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let tools: Vec<&str> = spec["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["tool"].as_str().unwrap())
        .collect();
    assert_eq!(tools, ["monodepth", "relight"]);
    let bad = run(strata().args(["pipeline", "emit-builtin", "recolor"]));
    assert_eq!(bad.status.code(), Some(1));
}

fn make_project(dir: &Path) -> PathBuf {
    let input = sample(dir);
    let proj = dir.join("proj");
    let o = run(strata().args(["project", "new"]).arg(&proj).arg(&input));
    assert!(o.status.success(), "{}", stderr(&o));
    proj
}

#[test]
fn pipeline_run_keeps_original_layers() {
    let dir = tempfile::tempdir().unwrap();
    let proj = make_project(dir.path());
    let spec = dir.path().join("spec.json");
    let emitted = run(strata().args(["pipeline", "emit-builtin", "background_blur"]));
    std::fs::write(&spec, &emitted.stdout).unwrap();
    let out = dir.path().join("out");
    let o = run(strata()
        .args(["pipeline", "run", "--backend", "stub"])
        .arg(&proj)
        .arg(&spec)
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let before = load_project(&proj).unwrap();
    let after = load_project(&out).unwrap();
    assert_eq!(after.len(), before.len() + 3);
    assert_eq!(after.layers()[0], before.layers()[0]);
    assert_eq!(
        std::fs::read(proj.join("layers/0.png")).unwrap(),
        std::fs::read(out.join("layers/0.png")).unwrap()
    );
}

#[test]
fn pipeline_validation_error_names_step() {
    let dir = tempfile::tempdir().unwrap();
    let proj = make_project(dir.path());
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"steps": [{"tool": "invert", "inputs": ["image"], "output": "a"},
                      {"tool": "invert", "inputs": ["nope"], "output": "b"}]}"#,
    )
    .unwrap();
    let o = run(strata()
        .args(["pipeline", "run"])
        .arg(&proj)
        .arg(&spec)
        .arg(dir.path().join("out")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("step 1"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unreachable_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let proj = make_project(dir.path());
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        &run(strata().args(["pipeline", "emit-builtin", "relight"])).stdout,
    )
    .unwrap();
    let backend = format!("tcp:127.0.0.1:{}", dead_port());
    let o = run(strata()
        .args(["pipeline", "run", "--backend", &backend])
        .arg(&proj)
        .arg(&spec)
        .arg(dir.path().join("o")));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    // Same through the environment variable.
    let input = sample(dir.path());
    let o = run(strata()
        .env("GIMPML_BACKEND", &backend)
        .args(["tool", "denoise"])
        .arg(&input)
        .arg(dir.path().join("d.png")));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    assert_eq!(
        run(strata()
            .args(["tool", "sharpen"])
            .arg(&input)
            .arg(dir.path().join("o.png")))
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        run(strata()
            .args(["tool", "invert"])
            .arg(dir.path().join("missing.png"))
            .arg(dir.path().join("o.png")))
        .status
        .code(),
        Some(1)
    );
    assert_eq!(run(strata().args(["--bogus"])).status.code(), Some(1));
    assert_eq!(
        run(strata()
            .args(["tool", "denoise", "--backend", "carrier-pigeon"])
            .arg(&input)
            .arg("x.png"))
        .status
        .code(),
        Some(1)
    );
    let help = run(strata().args(["tool", "--help"]));
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for flag in [
        "--force-cpu",
        "--backend",
        "--seed",
        "--k",
        "--scale",
        "--sigma",
        "--hue",
        "--saturation",
        "--strength",
        "GIMPML_BACKEND",
    ] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
}

#[test]
fn project_commands() {
    let dir = tempfile::tempdir().unwrap();
    let proj = make_project(dir.path());
    let overlay = write_image(
        dir.path(),
        "o.png",
        4,
        4,
        4,
        |_, _, c| if c == 3 { 255 } else { 200 },
    );
    let o = run(strata()
        .args([
            "project",
            "add",
            "--name",
            "patch",
            "--opacity",
            "0.5",
            "--offset-x",
            "2",
            "--offset-y",
            "3",
        ])
        .arg(&proj)
        .arg(&overlay));
    assert!(o.status.success(), "{}", stderr(&o));
    let stack = load_project(&proj).unwrap();
    assert_eq!(stack.len(), 2);
    assert_eq!(stack.get("patch").unwrap().offset(), (2, 3));
    let flat = dir.path().join("flat.png");
    assert!(
        run(strata().args(["project", "flatten"]).arg(&proj).arg(&flat))
            .status
            .success()
    );
    let img = load_png(&flat).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (16, 12, 4));
    let info = run(strata().args(["project", "info"]).arg(&proj));
    assert!(String::from_utf8_lossy(&info.stdout).contains("patch"));
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve_stub() -> (Server, String) {
    let mut child = strata()
        .args(["serve-stub", "--port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();
    (Server(child), addr)
}

#[test]
fn serve_stub_speaks_the_protocol() {
    let (_server, addr) = serve_stub();

    let mut stream = TcpStream::connect(&addr).unwrap();
    stream.write_all(b"NOPE").unwrap();
    assert_eq!(read_response(&mut stream).unwrap().status(), 2);

    let o = run(strata().args(["probe", "--backend", &format!("tcp:{addr}")]));
    assert!(o.status.success(), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path());
    let (remote, local) = (dir.path().join("r.png"), dir.path().join("l.png"));
    let o = run(strata()
        .args([
            "tool",
            "semseg",
            "--seed",
            "4",
            "--backend",
            &format!("tcp:{addr}"),
        ])
        .arg(&input)
        .arg(&remote));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run(strata()
        .args(["tool", "semseg", "--seed", "4"])
        .arg(&input)
        .arg(&local))
    .status
    .success());
    assert_eq!(
        std::fs::read(remote).unwrap(),
        std::fs::read(local).unwrap()
    );
}

#[test]
fn serve_stub_bind_failure_exits_1() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = run(strata().args(["serve-stub", "--port", &port]));
    assert_eq!(o.status.code(), Some(1));
}
