//! `key = value` text format shared by config files and checkpoint headers.
//! Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `text` into an ordered key map. Every malformed line is reported.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let (map, errors) = parse_lenient(text);
    if errors.is_empty() {
        Ok(map)
    } else {
        Err(Error::Config(errors))
    }
}

/// Like [`parse`], but returns the well-formed entries alongside the
/// problems so callers can keep validating.
pub fn parse_lenient(text: &str) -> (BTreeMap<String, String>, Vec<String>) {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {}: expected `key = value`, got `{line}`", no + 1));
            continue;
        };
        let key = key.trim();
        if key.is_empty() {
            errors.push(format!("line {}: empty key", no + 1));
            continue;
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            errors.push(format!("line {}: duplicate key `{key}`", no + 1));
        }
    }
    (map, errors)
}

/// Pulls typed values out of a key map, collecting every failure instead of
/// stopping at the first.
pub struct Reader<'a> {
    map: &'a mut BTreeMap<String, String>,
    pub errors: Vec<String>,
}

impl<'a> Reader<'a> {
    pub fn new(map: &'a mut BTreeMap<String, String>) -> Self {
        Reader {
            map,
            errors: Vec::new(),
        }
    }

    /// Removes `key` and parses it; keeps `current` when absent.
    pub fn take<V>(&mut self, key: &str, current: V) -> V
    where
        V: FromStr,
        V::Err: Display,
    {
        match self.map.remove(key) {
            None => current,
            Some(raw) => match raw.parse() {
                Ok(v) => v,
                Err(e) => {
                    self.errors.push(format!("{key}: cannot parse `{raw}`: {e}"));
                    current
                }
            },
        }
    }

    pub fn take_list(&mut self, key: &str, current: Vec<usize>) -> Vec<usize> {
        match self.map.remove(key) {
            None => current,
            Some(raw) => {
                let parsed: std::result::Result<Vec<usize>, _> = raw
                    .trim_matches(|c| c == '(' || c == ')' || c == '[' || c == ']')
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect();
                parsed.unwrap_or_else(|e| {
                    self.errors.push(format!("{key}: cannot parse `{raw}` as a list: {e}"));
                    current
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let map = parse("# header\n\na = 1\nb=two # trailing\n").unwrap();
        assert_eq!(map["a"], "1");
        assert_eq!(map["b"], "two");
    }

    #[test]
    fn reports_every_bad_line() {
        let Err(Error::Config(errs)) = parse("x\n= 3\na = 1\na = 2\n") else {
            panic!("expected config error");
        };
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn reader_collects_parse_errors() {
        let mut map = parse("n = abc\ndepths = 2, 6,6,2\n").unwrap();
        let mut r = Reader::new(&mut map);
        assert_eq!(r.take("n", 5usize), 5);
        assert_eq!(r.take_list("depths", vec![]), vec![2, 6, 6, 2]);
        assert_eq!(r.errors.len(), 1);
        assert!(map.is_empty());
    }
}
