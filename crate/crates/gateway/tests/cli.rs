use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn carevoice(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carevoice"))
        .arg("--data-root")
        .arg(root)
        .args(args)
        .env_remove("CAREVOICE_PROVIDERS")
        .env("CAREVOICE_LOG", "warn")
        .output()
        .unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_doc(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("Wellbeing Check.txt");
    std::fs::write(&path, "Good morning.\r\nHow are you today? Did you sleep well?\r\n\r\nThank you! Do you feel alone?\r\n").unwrap();
    path
}

#[test]
fn import_run_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let doc = write_doc(dir.path());

    let q = ok_json(&carevoice(&root, &["import-doc", doc.to_str().unwrap(), "--prerender", "fr"]));
    assert_eq!(q["id"], "wellbeing-check");
    assert_eq!(q["questions"].as_array().unwrap().len(), 3);
    assert!(root.join("prompts/wellbeing-check/fr/prompts.json").exists());

    let again = carevoice(&root, &["import-doc", doc.to_str().unwrap()]);
    assert!(!again.status.success(), "duplicate import must fail");

    let record = ok_json(&carevoice(
        &root,
        &[
            "run",
            "-q",
            "wellbeing-check",
            "--reply",
            "Je suis si heureux de vivre ici",
            "--reply-language",
            "fr",
        ],
    ));
    assert_eq!(record["detected_language"], "fr");
    assert_eq!(record["status"], "completed");
    assert_eq!(record["final_label"], "JOY");
    let id = record["id"].as_str().unwrap();

    let results = ok_json(&carevoice(&root, &["inspect", "--session", id]));
    assert_eq!(results["session_id"], id);
    assert_eq!(results["answers"].as_array().unwrap().len(), 3);

    let list = ok_json(&carevoice(&root, &["inspect"]));
    assert_eq!(list.as_array().unwrap().len(), 1);

    let wav = root.join("sessions").join(id).join("answer-1.wav");
    let info = ok_json(&carevoice(&root, &["inspect", "--wav", wav.to_str().unwrap()]));
    assert_eq!(info["sample_rate_hz"], 48_000);
    assert_eq!(info["bit_depth"], 24);
    assert_eq!(info["channels"], 2);
    assert_eq!(info["metadata"]["text"], "Je suis si heureux de vivre ici");
}

#[test]
fn run_accepts_wav_files_and_retakes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let doc = write_doc(dir.path());
    ok_json(&carevoice(&root, &["import-doc", doc.to_str().unwrap(), "--id", "w"]));
    let session = ok_json(&carevoice(&root, &["run", "-q", "w", "--reply", "bonjour", "--reply-language", "fr"]));
    let sessions = root.join("sessions").join(session["id"].as_str().unwrap());
    let welcome = sessions.join("welcome.wav");
    let answer = sessions.join("answer-1.wav");
    let silent = dir.path().join("silent.wav");
    std::fs::write(&silent, carevoice_core::audio::write_wav(&carevoice_core::audio::AudioClip::silence(
        carevoice_core::audio::SOURCE_FORMAT,
        4_410,
    )))
    .unwrap();

    let arg = |n: usize, p: &Path| format!("{n}={}", p.display());
    let record = ok_json(&carevoice(
        &root,
        &[
            "run",
            "-q",
            "w",
            "--welcome",
            welcome.to_str().unwrap(),
            "--answer",
            &arg(1, &silent),
            "--answer",
            &arg(1, &answer),
            "--answer",
            &arg(3, &answer),
        ],
    ));
    let repeats: Vec<u64> = record["answers"].as_array().unwrap().iter().map(|a| a["repeats_used"].as_u64().unwrap()).collect();
    assert_eq!(repeats, [1, 2, 0]);
    assert_eq!(record["answers"][1]["no_response"], true);

    let bad = carevoice(&root, &["run", "-q", "w", "--answer", &arg(4, &answer)]);
    assert!(!bad.status.success());
    let bad = carevoice(&root, &["run", "-q", "w", "--answer", "0=x.wav"]);
    assert!(!bad.status.success());
}

#[test]
fn bench_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let doc = write_doc(dir.path());
    let csv = dir.path().join("bench.csv");
    let out = carevoice(
        &root,
        &["bench", "--document", doc.to_str().unwrap(), "--repetitions", "2", "--csv", csv.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    for stage in ["tts", "playback", "record", "stt", "translate", "emotion", "store", "total"] {
        assert!(table.contains(stage), "{stage} missing from\n{table}");
    }
    let csv = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split(',').count(), 2 + 8 * 2 + 1);
    assert!(lines[1..].iter().all(|l| l.ends_with(",2")));
    assert!(!root.join("sessions").exists() || std::fs::read_dir(root.join("sessions")).unwrap().count() == 0);
}

#[test]
fn invalid_configuration_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let out = carevoice(&root, &["--providers", "remote", "inspect"]);
    assert!(out.status.success(), "inspect needs no providers");
    let out = carevoice(&root, &["--providers", "remote", "bench", "--document", "x.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("base URL"));
    let out = carevoice(&root, &["--max-repeats", "9", "inspect"]);
    assert!(!out.status.success());
}
