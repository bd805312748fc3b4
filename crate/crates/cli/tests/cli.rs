use std::path::Path;
use std::process::{Command, Output};

use srmmd_cli::ppm::{read_ppm, write_ppm, PpmImage};

fn srmmd(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_srmmd"));
    cmd.args(args).env_remove("SRMMD_OUTPUT_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn relative_outputs_resolve_against_the_working_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"toy-mixture\"\nparticles = 12\noutput = \"out\"\n[flow]\niterations = 15\n",
    );
    let cwd = dir.path().join("work");
    std::fs::create_dir(&cwd).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_srmmd"))
        .args(["run", cfg.to_str().unwrap()])
        .env_remove("SRMMD_OUTPUT_ROOT")
        .current_dir(&cwd)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).starts_with("toy-mixture: 15 steps"));
    let rows = std::fs::read_to_string(cwd.join("out/metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3);
}

#[test]
fn output_root_variable_prefixes_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"toy-mixture\"\nparticles = 8\noutput = \"nested/run\"\n[flow]\niterations = 3\n",
    );
    let root = dir.path().join("root");
    let o = srmmd(&["run", cfg.to_str().unwrap()], &[("SRMMD_OUTPUT_ROOT", &root)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let d = root.join("nested/run");
    for f in ["metrics.csv", "particles_initial.csv", "particles_final.csv", "config_resolved.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let echo = std::fs::read_to_string(d.join("config_resolved.json")).unwrap();
    assert!(echo.contains(&d.display().to_string()));
}

#[test]
fn invalid_pairing_exits_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = write_config(
        dir.path(),
        &format!(
            "experiment = \"toy-mixture\"\noutput = {:?}\n[flow]\nkind = \"svgd\"\n",
            out.display().to_string()
        ),
    );
    let o = srmmd(&["run", cfg.to_str().unwrap()], &[]);
    assert!(!o.status.success());
    let err = text(&o.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("flow.kind"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_fields_and_syntax_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"toy-mixture\"\n[flow]\nlamda = 0.1\n");
    let o = srmmd(&["run", cfg.to_str().unwrap()], &[]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("lamda"));

    let cfg = write_config(dir.path(), "experiment = \n");
    let o = srmmd(&["run", cfg.to_str().unwrap()], &[]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("parse error at byte"));
}

#[test]
fn stein_check_passes_on_a_standard_normal() {
    let o = srmmd(
        &["stein-check", "--target", "standard-normal", "-m", "20000", "--queries", "3"],
        &[],
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "y,mean,stderr,z_score,verdict");
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.ends_with(",PASS")));
}

#[test]
fn eval_reports_metrics_for_a_particle_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"toy-mixture\"\n");
    let parts = dir.path().join("p.csv");
    std::fs::write(&parts, "-2,-2\n2,2\n-2,2\n2,-2\n").unwrap();
    let o = srmmd(&["eval", parts.to_str().unwrap(), cfg.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "step,mmd2,ksd2,w2,wall_ms");
    let fields: Vec<&str> = rows[1].split(',').collect();
    let mmd2: f64 = fields[1].parse().unwrap();
    let w2: f64 = fields[3].parse().unwrap();
    assert!(mmd2 >= 0.0 && w2 > 0.0);

    let o = srmmd(&["eval", "/nonexistent.csv", cfg.to_str().unwrap()], &[]);
    assert!(!o.status.success());
}

#[test]
fn color_transfer_writes_a_recolored_image() {
    let dir = tempfile::tempdir().unwrap();
    let mut src = PpmImage::filled(6, 5, [200, 30, 30]).unwrap();
    for i in 0..15 {
        src.set_pixel(i, [20, 20, 220]);
    }
    let tgt = PpmImage::filled(4, 4, [40, 200, 40]).unwrap();
    let (sp, tp) = (dir.path().join("s.ppm"), dir.path().join("t.ppm"));
    write_ppm(&src, &sp).unwrap();
    write_ppm(&tgt, &tp).unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"color-transfer\"\nparticles = 10\n[flow]\niterations = 20\nstep_size = 0.5\n",
    );
    let out = dir.path().join("ct");
    let o = srmmd(
        &[
            "color-transfer",
            sp.to_str().unwrap(),
            tp.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let img = read_ppm(&out.join("recolored.ppm")).unwrap();
    assert_eq!((img.width(), img.height()), (6, 5));
    assert_ne!(img, src);

    let toy = write_config(dir.path(), "experiment = \"toy-mixture\"\n");
    let o = srmmd(
        &["color-transfer", sp.to_str().unwrap(), tp.to_str().unwrap(), "--config", toy.to_str().unwrap()],
        &[],
    );
    assert!(!o.status.success());
}
