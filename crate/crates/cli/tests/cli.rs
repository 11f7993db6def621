use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scn"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SCN_SEED")
        .output()
        .expect("spawn scn")
}

fn stable_lines(manifest: &Path) -> String {
    fs::read_to_string(manifest)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("runtime.") && !l.starts_with("time."))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_smoke_and_thread_independence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = scn(dir, &["synth", "--output", "cohort", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for s in 1..=5 {
        for f in ["data.fmat", "atlas.atls", "coords.ctbl"] {
            assert!(dir.join(format!("cohort/sub-{s:02}/{f}")).is_file());
        }
    }
    let run = |out: &str, threads: &str| {
        let o = scn(
            dir,
            &["pipeline", "--cohort", "cohort", "--output", out, "--threads", threads, "--set", "significance.n_perm=10"],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run("a", "8");
    for s in 1..=5 {
        for f in [
            "stage1.report",
            "stage2.report",
            "w_ridge.fmat",
            "significance.report",
            "significance_null.fmat",
            "ica_maps.fmat",
            "ica.manifest",
        ] {
            assert!(dir.join(format!("a/sub-{s:02}/{f}")).is_file(), "missing sub-{s:02}/{f}");
        }
    }
    for f in ["group/group_maps.fmat", "similarity/profiles.tsv", "similarity/clusters.tsv", "similarity/dendrogram.tsv"] {
        assert!(dir.join("a").join(f).is_file(), "missing {f}");
    }
    let manifest = fs::read_to_string(dir.join("a/run.manifest")).unwrap();
    assert!(manifest.contains("config_hash = "));
    assert!(manifest.contains("time.stage1 = "));
    assert!(manifest.contains("runtime.threads = 8"));

    run("b", "1");
    assert_eq!(stable_lines(&dir.join("a/run.manifest")), stable_lines(&dir.join("b/run.manifest")));
    assert_eq!(
        fs::read(dir.join("a/similarity/clusters.tsv")).unwrap(),
        fs::read(dir.join("b/similarity/clusters.tsv")).unwrap()
    );
}

#[test]
fn missing_atlas_exits_2_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = scn(dir, &["synth", "--output", "cohort", "--set", "synth.subjects=1", "--set", "synth.voxels=60"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let atlas = dir.join("cohort/sub-01/atlas.atls");
    fs::remove_file(&atlas).unwrap();
    let o = scn(dir, &["stage1", "--cohort", "cohort", "--output", "out"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("atlas.atls"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = scn(tmp.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    let o = scn(tmp.path(), &["stage1", "--set", "stage1.n_lambdas=many"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = scn(tmp.path(), &["stage1", "--set", "no.such.key=1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn settings_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.cfg"), "# test\nstage1.n_lambdas = 7\nseed = 5\nica.k = 9\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_scn"))
        .current_dir(dir)
        .args(["stage1", "--config", "run.cfg", "--seed", "11", "--print-config"])
        .env("SCN_STAGE1_N_LAMBDAS", "8")
        .env("SCN_SEED", "6")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("stage1.n_lambdas = 8\n"), "{text}");
    assert!(text.contains("seed = 11\n"), "{text}");
    assert!(text.contains("ica.k = 9\n"), "{text}");
}
