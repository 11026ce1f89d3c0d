use std::io::Cursor;

use tvspec::io::{
    ingest_reader, read_series, read_spectrogram, read_tvspectrum, write_series, write_spectrogram,
    write_tvspectrum, KeyValues, Spectrogram,
};
use tvspec::spectral::{default_freq_grid, TvSpectrum};
use tvspec::Error;

fn prices_csv(rows: &[(&str, &str)]) -> String {
    let mut s = String::from("date,close\n");
    for (d, p) in rows {
        s.push_str(&format!("{d},{p}\n"));
    }
    s
}

#[test]
fn single_return_is_percent_log_change() {
    let csv = prices_csv(&[("2020-01-01", "100"), ("2020-01-02", "101")]);
    let rs = ingest_reader(Cursor::new(csv), "close", Some("date"), 2, true).unwrap();
    assert_eq!(rs.returns.len(), 1);
    let expect = 100.0 * 1.01f64.ln();
    assert!((rs.returns[0] - expect).abs() < 1e-12);
    assert!((rs.returns[0] - 0.995).abs() < 1e-3);
    assert_eq!(rs.squared.as_ref().unwrap()[0], rs.returns[0] * rs.returns[0]);
    assert_eq!(rs.dates, vec!["2020-01-02".to_string()]);
}

#[test]
fn constant_prices_give_zero_returns() {
    let rows: Vec<(String, String)> = (1..=30).map(|d| (format!("2020-01-{d:02}"), "50.5".into())).collect();
    let refs: Vec<(&str, &str)> = rows.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let rs = ingest_reader(Cursor::new(prices_csv(&refs)), "close", Some("date"), 2, true).unwrap();
    assert_eq!(rs.returns.len(), 29);
    assert!(rs.returns.iter().all(|&r| r == 0.0));
    assert!(rs.squared.unwrap().iter().all(|&r| r == 0.0));
}

#[test]
fn one_malformed_row_in_a_thousand_is_dropped() {
    let mut s = String::from("close\n");
    for i in 0..1000 {
        if i == 417 {
            s.push_str("n/a\n");
        } else {
            s.push_str(&format!("{}\n", 100.0 + (i % 7) as f64));
        }
    }
    let rs = ingest_reader(Cursor::new(s), "close", None, 51, false).unwrap();
    assert_eq!(rs.prices.len(), 999);
    assert_eq!(rs.returns.len(), 998);
    // header is line 1, row i is line i + 2
    assert_eq!(rs.dropped_rows, vec![419]);
    assert!(rs.returns.iter().all(|r| r.is_finite()));
}

#[test]
fn nonpositive_and_missing_prices_are_dropped() {
    let csv = prices_csv(&[
        ("2020-01-01", "10"),
        ("2020-01-02", "0"),
        ("2020-01-03", ""),
        ("2020-01-04", "-3"),
        ("2020-01-05", "20"),
    ]);
    let rs = ingest_reader(Cursor::new(csv), "close", Some("date"), 2, false).unwrap();
    assert_eq!(rs.dropped_rows, vec![3, 4, 5]);
    assert!((rs.returns[0] - 100.0 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(rs.dates, vec!["2020-01-05".to_string()]);
}

#[test]
fn ingestion_errors_name_the_problem() {
    let csv = prices_csv(&[("2020-01-01", "1"), ("2020-01-02", "2")]);
    match ingest_reader(Cursor::new(csv.clone()), "price", None, 2, false) {
        Err(Error::InvalidInput(m)) => assert!(m.contains("price")),
        other => panic!("expected missing column error, got {other:?}"),
    }
    let bad_date = prices_csv(&[("2020-01-01", "1"), ("01/02/2020", "2")]);
    match ingest_reader(Cursor::new(bad_date), "close", Some("date"), 2, false) {
        Err(Error::Parse { location, .. }) => assert_eq!(location, "line 3"),
        other => panic!("expected date error, got {other:?}"),
    }
    assert!(ingest_reader(Cursor::new(csv), "close", None, 51, false).is_err());
}

#[test]
fn series_round_trip() {
    let y = vec![0.1, -2.5, 1e-300, 3.0e12, -0.0];
    let mut buf = Vec::new();
    write_series(&y, None, &mut buf).unwrap();
    let back = read_series(buf.as_slice()).unwrap();
    assert_eq!(y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), back.iter().map(|v| v.to_bits()).collect::<Vec<_>>());

    let dates: Vec<String> = (1..=5).map(|d| format!("2021-03-0{d}")).collect();
    let mut buf = Vec::new();
    write_series(&y, Some(&dates), &mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("t,date,value\n"));
    assert_eq!(read_series(buf.as_slice()).unwrap(), y);
}

#[test]
fn spectrum_tables_round_trip() {
    let grid = default_freq_grid(7);
    let power: Vec<f64> = (0..3 * 7).map(|i| 0.5 + (i as f64).sqrt() / 3.0).collect();
    let spec = TvSpectrum::new(vec![1, 2, 3], grid, power).unwrap();
    let mut buf = Vec::new();
    write_tvspectrum(&spec, &mut buf).unwrap();
    assert_eq!(read_tvspectrum(buf.as_slice()).unwrap(), spec);

    let sg = Spectrogram {
        mean: spec.clone(),
        lower90: Some(spec.power().iter().map(|p| p * 0.5).collect()),
        upper90: Some(spec.power().iter().map(|p| p * 2.0).collect()),
    };
    let mut buf = Vec::new();
    write_spectrogram(&sg, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t,nu,log_f,lower90,upper90\n"));
    let back = read_spectrogram(buf.as_slice()).unwrap();
    for (a, b) in back.mean.power().iter().zip(spec.power()) {
        assert!((a / b - 1.0).abs() < 1e-14);
    }
    assert!(back.lower90.is_some() && back.upper90.is_some());

    let no_band = Spectrogram { mean: spec, lower90: None, upper90: None };
    let mut buf = Vec::new();
    write_spectrogram(&no_band, &mut buf).unwrap();
    let back = read_spectrogram(buf.as_slice()).unwrap();
    assert!(back.lower90.is_none());
}

#[test]
fn ragged_spectrum_table_is_rejected() {
    let text = "t,nu,power\n1,0.0,1\n1,0.5,1\n2,0.0,1\n2,0.25,1\n";
    assert!(read_tvspectrum(text.as_bytes()).is_err());
}

#[test]
fn key_values_render_and_parse_back() {
    let mut kv = KeyValues::default();
    kv.set("seed", 42);
    kv.set("estimators", "G,R,AD");
    kv.set("input", "");
    let back = KeyValues::parse(&kv.render()).unwrap();
    assert_eq!(back, kv);
}
