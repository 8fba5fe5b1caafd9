use std::fs;
use std::path::Path;

use fastband::grid::Sample;
use fastband::{Error, Result};

/// Parses numeric CSV text. Rows are split on commas when the first data line
/// contains one, otherwise on runs of whitespace. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_csv(text: &str, header: bool) -> Result<Sample> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    if header {
        lines.next();
    }
    let mut comma = None;
    let mut dim = 0;
    let mut data = Vec::new();
    for (lineno, line) in lines {
        let comma = *comma.get_or_insert_with(|| line.contains(','));
        let fields: Vec<&str> = if comma {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if dim == 0 {
            dim = fields.len();
        } else if fields.len() != dim {
            return Err(Error::InvalidInput(format!(
                "line {lineno}: expected {dim} fields, found {}",
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::InvalidInput(format!("line {lineno}: `{f}` is not a number")))?;
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("no data rows".into()));
    }
    Sample::new(dim, data)
}

pub fn read_csv(path: &Path, header: bool) -> Result<Sample> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    parse_csv(&text, header)
}

/// `"a,b;c,d"` → `[[a, b], [c, d]]`.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidInput(format!("`{v}` is not a number")))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comma_and_whitespace() {
        let a = parse_csv("1,2\n3.5, -4\n", false).unwrap();
        let b = parse_csv("1 2\n\n3.5\t-4\n", false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.row(1), &[3.5, -4.0]);
    }

    #[test]
    fn header_and_comments() {
        let s = parse_csv("x,y\n# note\n1e2,2\n", true).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.row(0), &[100.0, 2.0]);
    }

    #[test]
    fn errors() {
        assert!(parse_csv("x,y\n1,2\n", false).is_err());
        assert!(parse_csv("1,2\n3\n", false).is_err());
        assert!(parse_csv("", false).is_err());
        assert!(parse_csv("1,2\n1,nan\n", false).is_err());
        assert!(parse_csv("1,2\n3,4,5\n", false).is_err());
    }

    #[test]
    fn matrix() {
        assert_eq!(parse_matrix("1, 0.5; 0.5,2").unwrap(), vec![vec![1.0, 0.5], vec![0.5, 2.0]]);
        assert!(parse_matrix("1,x").is_err());
    }
}
