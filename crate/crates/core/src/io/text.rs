use std::collections::BTreeMap;
use std::path::Path;

use super::read_text;
use crate::detector::Anchor;
use crate::error::{Error, Result};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// `key = value` lines; `#` starts a comment. Repeated keys are an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in content_lines(text) {
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {n}: expected key = value, got {line:?}"))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {n}: empty key")));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {n}: key {k:?} given twice")));
        }
    }
    Ok(out)
}

/// One class name per line.
pub fn parse_class_list(text: &str) -> Result<Vec<String>> {
    let names: Vec<String> = content_lines(text).map(|(_, l)| l.to_string()).collect();
    if names.is_empty() {
        return Err(Error::Config("class list is empty".into()));
    }
    Ok(names)
}

pub fn load_class_list(path: &Path) -> Result<Vec<String>> {
    parse_class_list(&read_text(path)?)
}

/// `stride width height` per line, grouped by stride in order of first
/// appearance.
pub fn parse_anchors(text: &str) -> Result<Vec<(usize, Vec<Anchor>)>> {
    let mut out: Vec<(usize, Vec<Anchor>)> = Vec::new();
    for (n, line) in content_lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || {
            Error::Config(format!(
                "anchors line {n}: expected `stride width height`, got {line:?}"
            ))
        };
        let [s, w, h] = f[..] else {
            return Err(bad());
        };
        let stride: usize = s.parse().map_err(|_| bad())?;
        let anchor = Anchor::new(w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?)
            .map_err(|e| Error::Config(format!("anchors line {n}: {e}")))?;
        match out.iter_mut().find(|(st, _)| *st == stride) {
            Some((_, v)) => v.push(anchor),
            None => out.push((stride, vec![anchor])),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("anchor file lists no anchors".into()));
    }
    Ok(out)
}

pub fn load_anchors(path: &Path) -> Result<Vec<(usize, Vec<Anchor>)>> {
    parse_anchors(&read_text(path)?)
}
