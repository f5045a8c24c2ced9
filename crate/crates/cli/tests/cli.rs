use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use lockin_cli::{
    ingest, read_event_study, read_exposure, run_pipeline, tables_from_world, write_world, CliError, RunConfig, Scope,
};
use lockin_dgp::{generate_world, DgpConfig, SyntheticWorld};
use tempfile::TempDir;

fn small() -> DgpConfig {
    DgpConfig { n_cz: 40, cz_per_state: 5, ..DgpConfig::default() }
}

fn world_dir(cfg: &DgpConfig) -> (TempDir, SyntheticWorld) {
    let dir = TempDir::new().unwrap();
    let w = generate_world(cfg).unwrap();
    write_world(&w, dir.path()).unwrap();
    (dir, w)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lockin"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn validation(err: CliError) -> (u64, String, String) {
    match err {
        CliError::Validation { line, column, message, .. } => (line, column, message),
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn generated_world_ingests_cleanly() {
    let (dir, w) = world_dir(&small());
    let cfg = RunConfig::load(&dir.path().join("lockin.toml")).unwrap();
    cfg.validate().unwrap();
    let t = ingest(&cfg.inputs).unwrap();
    assert_eq!(t.summaries.len(), 7);
    assert!(t.summaries.iter().all(|s| s.missing.is_empty()));
    assert_eq!(t.loans, w.loans);
    assert_eq!(t.flows, w.county_flows);
    assert_eq!(t.panel.as_ref().unwrap(), &w.panel);
    assert_eq!(t.soc_panel.as_ref().unwrap(), &w.soc_panel);
    assert_eq!(t.centroids.as_ref().unwrap(), &w.centroids);
}

#[test]
fn negative_flow_is_rejected_with_its_line() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "flows.csv", "origin,destination,count\n01001,01002,5\n01002,01001,-3\n");
    let (line, column, _) = validation(lockin_cli::ingest::read_flows(&p).unwrap_err());
    assert_eq!((line, column.as_str()), (3, "count"));
}

#[test]
fn unknown_column_wrong_type_and_duplicates_are_located() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "flows.csv", "origin,destination,count,extra\n01001,01002,5,1\n");
    let (line, column, msg) = validation(lockin_cli::ingest::read_flows(&p).unwrap_err());
    assert_eq!((line, column.as_str(), msg.as_str()), (1, "extra", "unknown column"));

    let p = write(dir.path(), "c.csv", "cz,latitude,longitude,population\ncz1,40,-90,100\ncz2,forty,-91,100\n");
    let (line, column, _) = validation(lockin_cli::ingest::read_centroids(&p).unwrap_err());
    assert_eq!((line, column.as_str()), (3, "latitude"));

    let p = write(dir.path(), "x.csv", "county,cz,weight\n01001,cz1,1\n01002,cz1,1\n01001,cz1,1\n");
    let (line, _, msg) = validation(lockin_cli::ingest::read_crosswalk(&p).unwrap_err());
    assert_eq!(line, 4);
    assert!(msg.contains("line 2"), "{msg}");

    let p = write(dir.path(), "p.csv", "unit,period,y\na,2019,1\na,2020,\nb,2019.5,2\n");
    let (line, column, _) = validation(lockin_cli::ingest::read_panel(&p).unwrap_err());
    assert_eq!((line, column.as_str()), (4, "period"));
}

#[test]
fn panel_missing_values_are_counted() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "p.csv", "unit,period,y,x\na,2019,1,\na,2020,,\nb,2019,2,3\n");
    let (d, s) = lockin_cli::ingest::read_panel(&p).unwrap();
    assert_eq!((s.rows, s.columns), (3, 4));
    assert_eq!(s.missing, vec![("y".to_string(), 1), ("x".to_string(), 2)]);
    assert!(d.column("y").unwrap()[1].is_nan());
}

#[test]
fn exposure_identity_is_enforced() {
    let (dir, _) = world_dir(&small());
    let (t, _) = read_exposure(&dir.path().join("true_exposure.csv")).unwrap();
    assert_eq!(t.len(), 40);
    let p = write(dir.path(), "bad.csv", "cz,p_new,wop,mpw\ncz1,600,420,180\ncz2,600,420,181\n");
    let (line, column, _) = validation(read_exposure(&p).unwrap_err());
    assert_eq!((line, column.as_str()), (3, "mpw"));
}

#[test]
fn emitted_exposure_passes_the_identity_check() {
    let (dir, _) = world_dir(&small());
    let out = dir.path().join("out");
    let st = bin().args(["wedge", "-c"]).arg(dir.path().join("lockin.toml")).arg("--out").arg(&out).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let (t, s) = read_exposure(&out.join("exposure.csv")).unwrap();
    assert_eq!(t.len(), 40);
    assert!(s.missing.is_empty());
}

#[test]
fn event_study_rows_round_trip() {
    let (dir, _) = world_dir(&small());
    let out = dir.path().join("out");
    let st = bin().args(["estimate", "-c"]).arg(dir.path().join("lockin.toml")).arg("--out").arg(&out).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = fs::read_to_string(out.join("eventstudy.csv")).unwrap();
    let points = read_event_study(&out.join("eventstudy.csv")).unwrap();
    assert_eq!(points.len(), 8);
    let refs: Vec<_> = points.iter().filter(|p| p.reference).collect();
    assert_eq!(refs.len(), 1);
    assert_eq!((refs[0].year, refs[0].coef, refs[0].se), (2019, 0.0, 0.0));
    for p in &points {
        assert!((p.ci_lo - (p.coef - 1.96 * p.se)).abs() < 1e-9);
        assert!((p.ci_hi - (p.coef + 1.96 * p.se)).abs() < 1e-9);
    }
    assert_eq!(lockin_cli::output::event_study_csv(&points), text);
}

#[test]
fn run_without_placebo_section_writes_no_placebo_file() {
    let (dir, _) = world_dir(&small());
    let cfg_path = dir.path().join("lockin.toml");
    let text = fs::read_to_string(&cfg_path).unwrap();
    let start = text.find("[placebo]").unwrap();
    let end = text.find("[offset]").unwrap();
    fs::write(&cfg_path, format!("{}{}", &text[..start], &text[end..])).unwrap();
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("placebo.csv"), "stale").unwrap();
    let st = bin().args(["report", "-c"]).arg(&cfg_path).arg("--out").arg(&out).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for f in ["estimates.csv", "diagnostics.csv", "exposure.csv", "eventstudy.csv", "summary.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("placebo.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, _) = world_dir(&small());
    let cfg = dir.path().join("lockin.toml");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let st = bin().args(["report", "--replications", "50", "-c"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in lockin_cli::OUTPUT_FILES {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let placebo = fs::read_to_string(a.join("placebo.csv")).unwrap();
    assert_eq!(placebo.lines().count(), 51);
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let (dir, _) = world_dir(&small());
    let cfg = dir.path().join("lockin.toml");
    let ok = bin().args(["validate", "-c"]).arg(&cfg).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));

    fs::write(dir.path().join("flows.csv"), "origin,destination,count\n01001,01002,-1\n").unwrap();
    let bad = bin().args(["validate", "-c"]).arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("flows.csv:2: column `count`"), "{msg}");

    let unknown = write(dir.path(), "u.toml", "[inputs]\nloans = \"loans.csv\"\nflows = \"flows.csv\"\ncrosswalk = \"crosswalk.csv\"\nbogus = 1\n");
    assert_eq!(bin().args(["validate", "-c"]).arg(&unknown).output().unwrap().status.code(), Some(2));
}

#[test]
fn estimation_failure_exits_3_and_leaves_no_outputs() {
    let (dir, _) = world_dir(&small());
    let cfg = write(
        dir.path(),
        "absorbed.toml",
        "[inputs]\nloans = \"loans.csv\"\nflows = \"flows.csv\"\ncrosswalk = \"crosswalk.csv\"\npanel = \"panel.csv\"\n\n\
         [[model]]\nname = \"bad\"\noutcome = \"y_mig\"\nregressors = [\"post\"]\n",
    );
    let out = dir.path().join("out");
    let st = bin().args(["report", "-c"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&st.stderr);
    assert!(msg.contains("stage `estimates`"), "{msg}");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let (dir, _) = world_dir(&small());
    let env_out = dir.path().join("from_env");
    let st = bin()
        .args(["wedge", "-c"])
        .arg(dir.path().join("lockin.toml"))
        .env(lockin_cli::OUT_DIR_ENV, &env_out)
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(env_out.join("exposure.csv").is_file());
}

#[test]
fn offset_subcommand_prints_the_ratio() {
    let st = bin().args(["offset", "--beta", "-0.059", "--theta", "0.018"]).output().unwrap();
    assert_eq!(String::from_utf8_lossy(&st.stdout).trim(), "0.1372881356");
}

#[test]
fn pipeline_rebuilds_the_true_exposures() {
    let w = generate_world(&DgpConfig { new_rate_noise: 0.0, ..small() }).unwrap();
    let t = tables_from_world(&w).unwrap();
    let dir = TempDir::new().unwrap();
    let mut cfg = RunConfig::from_toml(&lockin_cli::synthetic::run_config_toml(&w), dir.path()).unwrap();
    cfg.run.penalty = 0.0;
    let out = run_pipeline(&cfg, &t, Scope::Wedge).unwrap();
    for r in out.exposures.table.rows() {
        let e = &w.exposures[&r.cz];
        assert!((r.p_new.unwrap() - e.p_new).abs() < 1e-8);
        assert!((r.wop.unwrap() - e.wop).abs() < 1e-8);
        assert_eq!(r.mpw.unwrap(), r.p_new.unwrap() - r.wop.unwrap());
    }
}

#[test]
fn flag_overrides_config() {
    let (dir, _) = world_dir(&small());
    let out = dir.path().join("out");
    let st = bin()
        .args(["placebo", "--replications", "7", "--seed", "3", "-c"])
        .arg(dir.path().join("lockin.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = fs::read_to_string(out.join("placebo.csv")).unwrap();
    assert_eq!(text.lines().count(), 8);
    let first_seed: u64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(first_seed, lockin_core::replication_seed(3, 0));
}
