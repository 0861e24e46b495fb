use std::path::Path;

use crate::error::{Error, Result};
use crate::linops::BlurKernel;

/// Parses rows of decimal numbers (whitespace or comma separated, `#`
/// comments, blank lines ignored) into a normalized blur kernel.
pub fn parse_kernel_text(text: &str) -> Result<BlurKernel> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("kernel line {}: bad number {s:?}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "kernel line {}: {} entries, expected {}",
                    n + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("kernel file has no rows".into()));
    }
    let (h, w) = (rows.len(), rows[0].len());
    BlurKernel::new(h, w, rows.concat())
}

/// A built-in name (`delta`, `uniform3`, `gauss5-1.0`, …) or a path to a
/// kernel text file.
pub fn load_kernel(spec: &str) -> Result<BlurKernel> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_kernel_text(&text)
    } else {
        BlurKernel::builtin(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes() {
        let k = parse_kernel_text("# box\n1 1 1\n1, 1, 1\n\n1 1 1\n").unwrap();
        assert_eq!((k.height(), k.width()), (3, 3));
        assert!(k.taps().iter().all(|&t| (t - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_ragged_and_junk() {
        assert!(parse_kernel_text("1 2 3\n4 5\n6 7 8").is_err());
        assert!(parse_kernel_text("1 x 1").is_err());
        assert!(parse_kernel_text("# nothing").is_err());
        assert!(parse_kernel_text("1 1").is_err());
    }

    #[test]
    fn builtin_fallback() {
        assert_eq!(load_kernel("delta").unwrap(), BlurKernel::delta());
        assert!(load_kernel("no-such-kernel").is_err());
    }
}
