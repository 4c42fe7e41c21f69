use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use smartjourney_core::dataset::{synth_series, SynthParams};
use smartjourney_core::pipeline::write_prepared_file;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smartjourney"));
    c.env_remove("SMARTJOURNEY_PORT").env("SOURCE_DATE_EPOCH", "1700000000");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("JSON error line on stderr");
    serde_json::from_str(line).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepared(dir: &Path, days: usize) -> PathBuf {
    let path = dir.join("prepared.csv");
    write_prepared_file(&synth_series(9, days, 250.0, &SynthParams::default()), &path).unwrap();
    path
}

fn train_gbdt(dir: &Path, prepared: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    let res = run(&[
        "train", "--model", "gbdt", "--district", "TUZLA", "--prepared", s(prepared), "--out", s(&out), "--epochs", "15",
    ]);
    let metrics = stdout_json(&res);
    assert!(metrics["rmse"].as_f64().unwrap().is_finite());
    out
}

fn write_raw(dir: &Path) -> (PathBuf, PathBuf) {
    let traffic = dir.join("traffic");
    std::fs::create_dir(&traffic).unwrap();
    let header = "_id,DATE_TIME,LONGITUDE,LATITUDE,GEOHASH,MINIMUM_SPEED,MAXIMUM_SPEED,AVERAGE_SPEED,NUMBER_OF_VEHICLES\n";
    std::fs::write(
        traffic.join("traffic_202005.csv"),
        format!(
            "{header}1,2020-05-01 07:00:00,29.36,40.84,sxk,10,90,50,30\n\
             2,2020-05-01 07:00:00,28.96,41.02,sxk,20,80,40,12\n\
             3,2020-05-01 08:00:00,29.35,40.85,sxk,10,90,60,10\n"
        ),
    )
    .unwrap();
    std::fs::write(
        traffic.join("traffic_202006.csv"),
        format!("{header}4,2020-05-01 08:00:00,29.14,40.99,sxk,10,90,55,5\n5,bad,29.1,40.9,x,1,2,1,1\n"),
    )
    .unwrap();
    let weather = dir.join("weather.csv");
    std::fs::write(
        &weather,
        "YEAR,MO,DY,HR,T2M,QV2M,WS2M,WD2M,PRECTOTCORR,LATITUDE,LONGITUDE,LOC_NAME\n\
         2020,5,1,7,14.1,8.9,1.6,240.7,0,40.8457,29.3584,TUZLA\n\
         2020,5,1,8,15.0,8.8,1.9,230.0,0,40.8457,29.3584,TUZLA\n\
         2020,5,1,7,14.5,8.7,1.2,200.0,0,41.0151,28.9551,FATIH\n",
    )
    .unwrap();
    (traffic, weather)
}

#[test]
fn ingest_writes_prepared_rows_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (traffic, weather) = write_raw(dir.path());
    let out = dir.path().join("prepared.csv");
    let pattern = format!("{}/*.csv", s(&traffic));
    let res = run(&["ingest", "--traffic", &pattern, "--weather", s(&weather), "--out", s(&out)]);
    let summary = stdout_json(&res);
    assert_eq!(summary["traffic_files"], 2);
    assert_eq!(summary["traffic_records"], 4);
    assert_eq!(summary["traffic_skipped"], 1);
    assert_eq!(summary["district_counts"]["TUZLA"], 2);
    assert_eq!(summary["district_counts"]["FATIH"], 1);
    assert_eq!(summary["district_counts"]["ATASEHIR"], 1);
    // TUZLA 07, TUZLA 08 and FATIH 07 have weather; ATASEHIR 08 does not.
    assert_eq!(summary["prepared_rows"], 3);
    assert_eq!(summary["dropped_without_weather"], 1);
    let rows = smartjourney_core::pipeline::read_prepared_file(&out).unwrap();
    assert_eq!(rows.len(), 3);
}

#[test]
fn ingest_without_weather_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (traffic, _) = write_raw(dir.path());
    let out = dir.path().join("prepared.csv");
    let missing = dir.path().join("nope.csv");
    let res = run(&[
        "ingest", "--traffic", s(&traffic.join("traffic_202005.csv")), "--weather", s(&missing), "--out", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(res.stdout.is_empty());
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 10);
    let out = dir.path().join("m.json");
    let res = run(&["train", "--model", "arima", "--district", "TUZLA", "--prepared", s(&p), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    let res = run(&["evaluate", "--artifact", "a.json", "--prepared", s(&p), "--frobnicate"]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_then_evaluate_reproduces_the_embedded_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 20);
    let artifact = train_gbdt(dir.path(), &p, "m.json");
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(&artifact).unwrap()).unwrap();
    let res = run(&["evaluate", "--artifact", s(&artifact), "--prepared", s(&p)]);
    assert_eq!(stdout_json(&res), stored["test_metrics"]);
}

#[test]
fn same_seed_gives_identical_artifact_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 15);
    let a = train_gbdt(dir.path(), &p, "a.json");
    let b = train_gbdt(dir.path(), &p, "b.json");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn seed_flag_is_accepted_before_or_after_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 15);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let common = ["--district", "TUZLA", "--prepared", s(&p), "--epochs", "5", "--model", "gbdt"];
    let mut first = vec!["--seed", "4", "train", "--out", s(&a)];
    first.extend(common);
    let mut second = vec!["train", "--out", s(&b), "--seed", "4"];
    second.extend(common);
    stdout_json(&run(&first));
    stdout_json(&run(&second));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn forecast_prints_twelve_points() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 20);
    let artifact = train_gbdt(dir.path(), &p, "m.json");
    let res = run(&["forecast", "--artifact", s(&artifact), "--prepared", s(&p), "--horizon", "12"]);
    let f = stdout_json(&res);
    assert_eq!(f["points"].as_array().unwrap().len(), 12);
    let res = run(&[
        "forecast", "--artifact", s(&artifact), "--prepared", s(&p), "--start", "2020-06-10T05:00:00", "--horizon", "3",
    ]);
    assert_eq!(stdout_json(&res)["points"][0]["ts"], "2020-06-10T06:00:00");
}

#[test]
fn forecast_with_three_hours_of_history_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 20);
    let artifact = train_gbdt(dir.path(), &p, "m.json");
    let short = dir.path().join("short.csv");
    write_prepared_file(&synth_series(9, 1, 250.0, &SynthParams::default())[..3], &short).unwrap();
    let res = run(&["forecast", "--artifact", s(&artifact), "--prepared", s(&short)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(res.stdout.is_empty());
    assert_eq!(stderr_error(&res)["error"], "insufficient_history");
}

#[test]
fn missing_artifact_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 10);
    let res = run(&["evaluate", "--artifact", s(&dir.path().join("none.json")), "--prepared", s(&p)]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(stderr_error(&res)["error"], "io_error");
}

struct Server {
    child: std::process::Child,
    addr: String,
}

fn start_server(models: &Path, extra: &[&str], env_port: Option<u16>) -> Result<Server, Output> {
    let mut cmd = bin();
    cmd.args(["serve", "--models-dir", s(models)]).args(extra);
    if let Some(p) = env_port {
        cmd.env("SMARTJOURNEY_PORT", p.to_string());
    }
    let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    if line.is_empty() {
        return Err(child.wait_with_output().unwrap());
    }
    let v: Value = serde_json::from_str(&line).unwrap();
    Ok(Server {
        child,
        addr: v["listening"].as_str().unwrap().to_string(),
    })
}

fn http_get(addr: &str, path: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).unwrap();
    out
}

#[cfg(unix)]
#[test]
fn serve_answers_health_and_stops_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), 20);
    let models = dir.path().join("models");
    std::fs::create_dir(&models).unwrap();
    train_gbdt(&models, &p, "tuzla.json");
    let mut server = start_server(&models, &["--port", "0", "--prepared", s(&p)], None).unwrap();
    let health = http_get(&server.addr, "/health");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.ends_with(r#"{"status":"ok"}"#), "{health}");
    let forecast = http_get(&server.addr, "/v1/forecast?district=TUZLA");
    assert!(forecast.starts_with("HTTP/1.1 200"), "{forecast}");

    let status = Command::new("kill").args(["-TERM", &server.child.id().to_string()]).status().unwrap();
    assert!(status.success());
    assert_eq!(server.child.wait().unwrap().code(), Some(0));
}

#[test]
fn serve_port_flag_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let busy_port = busy.local_addr().unwrap().port();

    let err = start_server(dir.path(), &["--port", &busy_port.to_string()], None).err().unwrap();
    assert_eq!(err.status.code(), Some(1));
    let err = start_server(dir.path(), &[], Some(busy_port)).err().unwrap();
    assert_eq!(err.status.code(), Some(1));

    // The flag beats the environment variable.
    let mut ok = start_server(dir.path(), &["--port", "0"], Some(busy_port)).unwrap();
    assert_ne!(ok.addr, format!("127.0.0.1:{busy_port}"));
    ok.child.kill().unwrap();
    ok.child.wait().unwrap();
}

#[test]
fn serve_refuses_a_corrupt_artifact() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"format_version": 1}"#).unwrap();
    let err = start_server(dir.path(), &["--port", "0"], None).err().unwrap();
    assert_eq!(err.status.code(), Some(1));
}
