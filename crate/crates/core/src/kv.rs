//! `key = value` text files. `#` starts a comment; keys may repeat.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: u64,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = (i + 1) as u64;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("expected `key = value`, got {content:?}")))?;
        entries.push(Entry {
            line,
            key: key.trim().to_owned(),
            value: value.trim().to_owned(),
        });
    }
    Ok(entries)
}

/// Parses `value` or records a complaint naming the key.
pub(crate) fn typed<T: std::str::FromStr>(entry: &Entry, problems: &mut Vec<String>) -> Option<T> {
    match entry.value.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            problems.push(format!("line {}: {} = {:?} is not valid", entry.line, entry.key, entry.value));
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_repeats() {
        let e = parse("# header\na = 1\n\nmodel = x; y # trailing\nmodel=z\n").unwrap();
        let pairs: Vec<(&str, &str)> = e.iter().map(|e| (e.key.as_str(), e.value.as_str())).collect();
        assert_eq!(pairs, [("a", "1"), ("model", "x; y"), ("model", "z")]);
        assert_eq!(e[1].line, 4);
        assert!(matches!(parse("oops\n"), Err(Error::Parse { line: 1, .. })));
    }
}
