//! Tap files: one decimal per line, LF terminated.

use std::fs;
use std::path::Path;

use super::FirFilter;
use crate::error::{AncError, Result};

/// Shortest text that parses back to the identical `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_taps(path: impl AsRef<Path>, filter: &FirFilter) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(filter.len() * 24);
    for &t in filter.taps() {
        text.push_str(&fmt_f64(t));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| AncError::io(path, e))
}

pub fn read_taps(path: impl AsRef<Path>) -> Result<FirFilter> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AncError::io(path, e))?;
    let taps = parse_taps(&text).map_err(|msg| AncError::format(path, msg))?;
    FirFilter::new(taps).map_err(|e| AncError::format(path, e.to_string()))
}

fn parse_taps(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| format!("line {}: '{}' is not a number", i + 1, l.trim()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn simple_filter_has_expected_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        let f = FirFilter::new(vec![1.0, -0.5]).unwrap();
        write_taps(&path, &f).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "1.0\n-0.5\n");
        assert_eq!(read_taps(&path).unwrap(), f);
    }

    #[test]
    fn non_numeric_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "0.25\nabc\n").unwrap();
        match read_taps(&path) {
            Err(AncError::Format { message, .. }) => assert!(message.contains("line 2"), "{message}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn random_1024_tap_filter_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(1024);
        let taps: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0) * 1e-3).collect();
        let f = FirFilter::new(taps).unwrap();
        write_taps(&path, &f).unwrap();
        let text1 = fs::read_to_string(&path).unwrap();
        let back = read_taps(&path).unwrap();
        assert!(back.taps().iter().zip(f.taps()).all(|(a, b)| a.to_bits() == b.to_bits()));
        write_taps(&path, &back).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), text1);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_taps("/nonexistent/taps.txt"), Err(AncError::Io { .. })));
    }
}
