//! Flat `key = value` settings shared by checkpoints and the command line.

use crate::error::{Error, Result};

/// A settings struct addressable by string keys.
pub trait Settings {
    /// Set one field from its textual value.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    /// Every field with its value, in a fixed order. Feeding these back
    /// through [`Settings::set`] reproduces the struct exactly.
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Apply `key = value` lines; `#` starts a comment.
    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_lines(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }
}

/// Split text into `(key, value)` pairs, rejecting malformed lines.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::invalid(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn unknown_key(key: &str) -> Error {
    Error::invalid(format!("unknown key {key:?}"))
}

pub fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected true or false, got {v:?}"))),
    }
}

/// `HxW`, e.g. `64x64`.
pub fn parse_extent(key: &str, v: &str) -> Result<(usize, usize)> {
    let (h, w) = v
        .split_once('x')
        .ok_or_else(|| Error::invalid(format!("{key}: expected HxW, got {v:?}")))?;
    Ok((parse(key, h.trim())?, parse(key, w.trim())?))
}

pub fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

pub fn parse_pair<T: std::str::FromStr>(key: &str, v: &str) -> Result<(T, T)> {
    let mut items: Vec<T> = parse_list(key, v)?;
    if items.len() != 2 {
        return Err(Error::invalid(format!("{key}: expected two comma-separated values, got {v:?}")));
    }
    let b = items.pop().unwrap_or_else(|| unreachable!());
    let a = items.pop().unwrap_or_else(|| unreachable!());
    Ok((a, b))
}

pub fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let kv = parse_lines("# head\n\n a = 1 # tail\nb=x\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse_lines("novalue\n").is_err());
    }

    #[test]
    fn typed_values() {
        assert_eq!(parse_extent("k", "64x32").unwrap(), (64, 32));
        assert_eq!(parse_pair::<f64>("k", "0.5, 2").unwrap(), (0.5, 2.0));
        assert!(parse_pair::<f64>("k", "1,2,3").is_err());
        assert!(parse_bool("k", "maybe").is_err());
    }
}
