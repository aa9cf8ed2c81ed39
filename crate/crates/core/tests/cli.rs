mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{random_records, repo_root};
use deepwolf::logfmt::save_record;

fn deepwolf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepwolf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn replays_the_golden_log() {
    let log = repo_root().join("fixtures/golden_wolf_win.log");
    let out = deepwolf(&["replay", path(&log)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("winner: werewolf side"));
}

#[test]
fn replay_reports_truncation_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let roles = "1=seer,2=villager,3=werewolf,4=villager,5=betrayer";
    let lines: Vec<String> = common::golden_log().lines().map(str::to_string).collect();

    let short = dir.path().join("short.log");
    std::fs::write(&short, lines[..10].join("\n")).unwrap();
    let out = deepwolf(&["replay", path(&short), "--roles", roles]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("in progress"), "{}", stdout(&out));

    let mut bad = lines.clone();
    bad[41] = "#9 voted for everyone.".into();
    let broken = dir.path().join("broken.log");
    std::fs::write(&broken, bad.join("\n")).unwrap();
    let out = deepwolf(&["replay", path(&broken), "--roles", roles]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 42"));

    let out = deepwolf(&["replay", path(&dir.path().join("missing.log")), "--roles", roles]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dataset_counts() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records");
    std::fs::create_dir_all(&records).unwrap();
    let count = |extra: &[&str]| {
        let mut args = vec!["dataset", "augment", "--records", path(&records)];
        args.extend_from_slice(extra);
        let out = deepwolf(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        stdout(&out)
    };
    assert!(count(&[]).contains("examples: 0\n"));

    let recs = random_records(32, 3);
    save_record(&records, "only", &recs[0]).unwrap();
    assert!(count(&[]).contains("examples: 120\n"));
    for (i, r) in recs.iter().enumerate().skip(1) {
        save_record(&records, &format!("g{i:02}"), r).unwrap();
    }
    let text = count(&[]);
    assert!(text.contains("records: 32\n") && text.contains("examples: 3840\n"), "{text}");
}

#[test]
fn eval_writes_a_csv_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("match.toml");
    std::fs::write(
        &spec,
        format!(
            "n_games = 40\nseed = 5\npolicies = [\"random-legal\", \"random-legal\", \"first-candidate\", \"random-legal\", \"random-legal\"]\nidentities = [\"A\", \"A\", \"B\", \"A\", \"A\"]\npools_dir = {:?}\n",
            repo_root().join("pools")
        ),
    )
    .unwrap();
    let table = dir.path().join("table.csv");
    let out = deepwolf(&["eval", "--spec", path(&spec), "--out", path(&table)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let mut reader = csv::Reader::from_path(&table).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, ["Player", "Werewolf", "Seer", "Betrayer", "Villager"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(names, ["A", "B", "Average"]);
    for row in &rows {
        for cell in row.iter().skip(1) {
            if cell != "N/A" {
                let (_, frac) = cell.split_once('.').unwrap();
                assert_eq!(frac.len(), 2, "{cell}");
                assert!((0.0..=1.0).contains(&cell.parse::<f64>().unwrap()));
            }
        }
    }
}

#[test]
fn unknown_policy_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepwolf(&["simulate", "--games", "1", "--out", path(dir.path()), "--policies", "a,b,c,d,e"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_the_commands() {
    let text = stdout(&deepwolf(&["--help"]));
    for cmd in ["serve", "simulate", "dataset", "train-baseline", "eval", "replay"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
