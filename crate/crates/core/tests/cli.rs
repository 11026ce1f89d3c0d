use std::fs::{self, File};
use std::path::{Path, PathBuf};

use tvspec::cli::{main_with, same_numeric_artifacts, MANIFEST_FILE};
use tvspec::experiment::read_reports;
use tvspec::generators::PiecewiseSpectrum;
use tvspec::io::{
    read_cutpoints, read_k_hist, read_series, read_spectrogram, read_traces, read_tvspectrum, KeyValues,
};
use tvspec::sampler::read_draws;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["tvspec"];
    v.extend_from_slice(args);
    main_with(v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_then_evaluate_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let code = run(&[
        "simulate", "--dgp", "piecewise", "--seed", "7", "--out", s(&sim), "--set", "t_len=512",
    ]);
    assert_eq!(code, 0);
    let y = read_series(File::open(sim.join("series.csv")).unwrap()).unwrap();
    assert_eq!(y.len(), 512);
    let truth = read_tvspectrum(File::open(sim.join("truth.csv")).unwrap()).unwrap();
    assert_eq!(truth.n_times(), 512);
    assert_eq!(truth.n_freqs(), 101);
    let ps = PiecewiseSpectrum::read(File::open(sim.join("piecewise.csv")).unwrap()).unwrap();
    assert_eq!(ps.t_len(), 512);

    let replay = dir.path().join("sim_replay");
    let manifest = sim.join(MANIFEST_FILE);
    assert_eq!(run(&["simulate", "--config", s(&manifest), "--out", s(&replay)]), 0);
    assert!(same_numeric_artifacts(&sim, &replay).unwrap());

    let eval = dir.path().join("eval");
    let code = run(&[
        "evaluate",
        "--series", s(&sim.join("series.csv")),
        "--truth", s(&sim.join("truth.csv")),
        "--out", s(&eval),
        "--set", "estimators=G,AD",
        "--set", "n_iter=400",
        "--set", "n_burn=100",
        "--set", "dgp=piecewise",
    ]);
    assert_eq!(code, 0);
    let reports = read_reports(File::open(eval.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.is_ok() && r.skl >= 0.0 && r.mse >= 0.0));
    for label in ["G", "AD"] {
        let est = read_tvspectrum(File::open(eval.join(format!("estimate_{label}.csv"))).unwrap()).unwrap();
        assert!(est.same_grid(&truth));
    }
    let replay = dir.path().join("eval_replay");
    assert_eq!(run(&["evaluate", "--config", s(&eval.join(MANIFEST_FILE)), "--out", s(&replay)]), 0);
    assert!(same_numeric_artifacts(&eval, &replay).unwrap());
}

#[test]
fn fit_artifacts_parse_back_and_replay_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    let code = run(&[
        "fit",
        "--input", s(&fixture("variance_break.csv")),
        "--out", s(&out),
        "--set", "n_iter=600",
        "--set", "n_burn=200",
        "--set", "thin=4",
    ]);
    assert_eq!(code, 0);
    let sg = read_spectrogram(File::open(out.join("spectrogram.csv")).unwrap()).unwrap();
    assert_eq!(sg.mean.n_times(), 1000);
    assert!(sg.lower90.is_some());
    let k_hist = read_k_hist(File::open(out.join("k_hist.csv")).unwrap()).unwrap();
    assert_eq!(k_hist.iter().map(|r| r.count).sum::<usize>(), 100);
    let traces = read_traces(File::open(out.join("traces.csv")).unwrap()).unwrap();
    let cuts = read_cutpoints(File::open(out.join("cutpoints.csv")).unwrap()).unwrap();
    let (t_len, draws) = read_draws(std::io::BufReader::new(File::open(out.join("draws.jsonl")).unwrap())).unwrap();
    assert_eq!(t_len, 1000);
    assert_eq!(draws.len(), 100);
    assert_eq!(traces.len(), draws.iter().map(|d| d.k).sum::<usize>());
    assert_eq!(cuts.len(), draws.iter().map(|d| d.k - 1).sum::<usize>());
    for d in &draws {
        d.to_state().unwrap();
    }
    PiecewiseSpectrum::read(File::open(out.join("piecewise.csv")).unwrap()).unwrap();

    let manifest = KeyValues::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.get("status"), Some("ok"));
    assert_eq!(manifest.get("command"), Some("fit"));
    let replay = dir.path().join("replay");
    assert_eq!(run(&["fit", "--config", s(&out.join(MANIFEST_FILE)), "--out", s(&replay)]), 0);
    assert!(same_numeric_artifacts(&out, &replay).unwrap());
}

#[test]
fn fit_on_price_file_with_squared_returns() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    let mut text = String::from("Date,Open,Close\n");
    let mut p = 100.0f64;
    let mut state = 12345u64;
    for i in 0..260 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        p *= 1.0 + 0.02 * u;
        let day = chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + chrono::Days::new(i);
        text.push_str(&format!("{day},{p},{p}\n"));
    }
    fs::write(&prices, &text).unwrap();
    let before = fs::read(&prices).unwrap();
    for squared in [false, true] {
        let out = dir.path().join(format!("fit_{squared}"));
        let mut args = vec![
            "fit", "--input", s(&prices), "--price-col", "Close", "--date-col", "Date", "--out", s(&out),
            "--set", "n_iter=300", "--set", "n_burn=100",
        ];
        if squared {
            args.push("--squared");
        }
        assert_eq!(run(&args), 0);
        let series = fs::read_to_string(out.join("series.csv")).unwrap();
        assert!(series.starts_with("t,date,value\n1,2015-01-02,"));
        let y = read_series(File::open(out.join("series.csv")).unwrap()).unwrap();
        assert_eq!(y.len(), 259);
        assert_eq!(y.iter().all(|v| *v >= 0.0), squared);
        let sg = read_spectrogram(File::open(out.join("spectrogram.csv")).unwrap()).unwrap();
        assert_eq!(sg.mean.n_times(), 259);
        assert!(sg.mean.power().iter().all(|p| p.is_finite() && *p > 0.0));
    }
    assert_eq!(fs::read(&prices).unwrap(), before);
}

#[test]
fn experiment_table_has_one_row_per_estimator_and_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let args = [
        "experiment", "--preset", "desk", "--dgp", "garch", "--out", s(&out),
        "--set", "replicates=3", "--set", "n_iter=300", "--set", "n_burn=100", "--set", "msgarch_starts=1",
    ];
    assert_eq!(run(&args), 0);
    let reports = read_reports(File::open(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(reports.len(), 9);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);

    // Rerunning into the same directory resumes and changes nothing.
    assert_eq!(run(&args), 0);
    let again = read_reports(File::open(out.join("metrics.csv")).unwrap()).unwrap();
    assert!(reports.iter().zip(&again).all(|(a, b)| a.same_numbers(b)));

    // Different settings must not resume into the same table.
    let mut changed = args.to_vec();
    changed.extend_from_slice(&["--seed", "99"]);
    assert_eq!(run(&changed), 2);
}

#[test]
fn failures_leave_a_machine_readable_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    fs::create_dir_all(&out).unwrap();
    let code = run(&["fit", "--input", s(&dir.path().join("missing.csv")), "--out", s(&out)]);
    assert_eq!(code, 2);
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(record["status"], "error");
    assert_eq!(record["kind"], "invalid_input");
    assert_eq!(record["command"], "fit");

    assert_eq!(run(&["simulate", "--set", "no_such_key=1", "--out", s(&out)]), 2);
    assert_eq!(run(&["simulate", "--set", "n_burn=9000", "--out", s(&out)]), 2);

    // A series shorter than t_min is rejected at ingestion.
    let short = dir.path().join("short.csv");
    let mut text = String::from("t,value\n");
    for t in 1..=49 {
        text.push_str(&format!("{t},{}\n", (t as f64).sin()));
    }
    fs::write(&short, text).unwrap();
    assert_eq!(run(&["fit", "--input", s(&short), "--out", s(&out)]), 2);
}
