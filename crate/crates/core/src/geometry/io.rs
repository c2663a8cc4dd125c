use std::fmt::Write as _;
use std::path::Path;

use super::Homography;
use crate::{Error, Result};

/// One homography per line: nine row-major entries, 17 significant digits.
pub fn format_homography(h: &Homography) -> String {
    let mut line = String::new();
    for (i, v) in h.to_row_major().iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        write!(line, "{v:.16e}").unwrap();
    }
    line
}

pub fn parse_homography(line: &str) -> Result<Homography> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad homography entry {t:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let arr: [f64; 9] = vals
        .try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("expected 9 numbers per line, got {}", v.len())))?;
    Homography::from_row_major(&arr)
}

pub fn format_homographies(hs: &[Homography]) -> String {
    let mut out = String::new();
    for h in hs {
        out.push_str(&format_homography(h));
        out.push('\n');
    }
    out
}

pub fn parse_homographies(text: &str) -> Result<Vec<Homography>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_homography)
        .collect()
}

pub fn write_homographies(path: &Path, hs: &[Homography]) -> Result<()> {
    std::fs::write(path, format_homographies(hs)).map_err(|e| Error::io(path, e))
}

pub fn read_homographies(path: &Path) -> Result<Vec<Homography>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_homographies(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_precise() {
        let h = Homography::similarity(1.0123456789, 0.0871, [40.0, 32.0], [1.25, -0.75]);
        let back = parse_homography(&format_homography(&h)).unwrap();
        assert!(back.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_homography("1 0 0 0 1 0 0 0").is_err());
        assert!(parse_homography("1 0 0 0 1 0 0 0 x").is_err());
    }
}
