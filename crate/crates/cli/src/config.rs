//! Sectioned line-oriented scenario configs: `key = value` entries under
//! `[section]` headers, `#` comments, physical units carried in key names.
//! Unknown sections and keys are rejected with their line numbers.

use std::collections::BTreeMap;

use pairlab::Error;

/// Parsed config: top-level entries plus per-section tables, each value
/// remembering the line it came from.
#[derive(Debug, Clone, Default)]
pub struct ScenarioConfig {
    pub top: BTreeMap<String, (String, usize)>,
    pub sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

pub const KNOWN_SECTIONS: &[&str] = &[
    "grid", "spdc", "optics", "object", "medium", "slm", "optimization", "events", "outputs",
];

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = ScenarioConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !KNOWN_SECTIONS.contains(&name.as_str()) {
                    return Err(Error::Config(format!(
                        "line {line_no}: unknown section [{name}] (expected one of {KNOWN_SECTIONS:?})"
                    )));
                }
                cfg.sections.entry(name.clone()).or_default();
                section = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected `key = value`, got {line:?}"))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            let table = match &section {
                Some(name) => cfg.sections.get_mut(name).expect("section created"),
                None => &mut cfg.top,
            };
            if table.insert(key.clone(), (value, line_no)).is_some() {
                let loc = section.as_deref().unwrap_or("top level");
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}` in {loc}")));
            }
        }
        Ok(cfg)
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section { name: name.to_string(), table: self.sections.get(name) }
    }

    pub fn top_value(&self, key: &str) -> Option<&str> {
        self.top.get(key).map(|(v, _)| v.as_str())
    }

    /// Every key must have been consumed by the scenario; leftovers are
    /// reported with their locations.
    pub fn reject_unknown(&self, consumed: &[(String, String)]) -> Result<(), Error> {
        let mut complaints = Vec::new();
        for (key, (_, line)) in &self.top {
            if !consumed.iter().any(|(s, k)| s.is_empty() && k == key) {
                complaints.push(format!("line {line}: unknown key `{key}` at top level"));
            }
        }
        for (section, table) in &self.sections {
            for (key, (_, line)) in table {
                if !consumed.iter().any(|(s, k)| s == section && k == key) {
                    complaints.push(format!("line {line}: unknown key `{key}` in [{section}]"));
                }
            }
        }
        if complaints.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(complaints.join("; ")))
        }
    }
}

/// Typed accessor over one section; records which keys were consumed.
pub struct Section<'a> {
    name: String,
    table: Option<&'a BTreeMap<String, (String, usize)>>,
}

impl<'a> Section<'a> {
    pub fn raw(&self, key: &str) -> Option<&'a str> {
        self.table.and_then(|t| t.get(key)).map(|(v, _)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.table.and_then(|t| t.get(key)).map(|(_, l)| *l).unwrap_or(0)
    }

    pub fn require(&self, key: &str) -> Result<&'a str, Error> {
        self.raw(key).ok_or_else(|| {
            Error::Config(format!("section [{}]: missing required key `{key}`", self.name))
        })
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, Error> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|e| {
                Error::Config(format!("line {}: [{}] {key} = {v:?}: {e}", self.line(key), self.name))
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, Error> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, Error> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|e| {
                Error::Config(format!("line {}: [{}] {key} = {v:?}: {e}", self.line(key), self.name))
            }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, Error> {
        Ok(self.usize(key)?.unwrap_or(default))
    }

    pub fn str_or(&self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_units() {
        let text = "\
# scenario file
scenario = encode-restore
seed = 7

[grid]
n = 32          # desk scale
pitch_um = 50
";
        let cfg = ScenarioConfig::parse(text).unwrap();
        assert_eq!(cfg.top_value("scenario"), Some("encode-restore"));
        assert_eq!(cfg.section("grid").usize("n").unwrap(), Some(32));
        assert_eq!(cfg.section("grid").f64("pitch_um").unwrap(), Some(50.0));
        assert!(cfg.section("medium").raw("kind").is_none());
    }

    #[test]
    fn rejects_unknown_section_with_line() {
        let err = ScenarioConfig::parse("[nonsense]\nx = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("nonsense"), "{msg}");
    }

    #[test]
    fn rejects_bad_lines_and_duplicates() {
        let err = ScenarioConfig::parse("[grid]\nnot a kv line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let err = ScenarioConfig::parse("[grid]\nn = 4\nn = 8\n").unwrap_err();
        assert!(err.to_string().contains("duplicate key `n`"));
    }

    #[test]
    fn unknown_keys_are_reported_with_location() {
        let cfg = ScenarioConfig::parse("[grid]\nn = 4\nbogus = 1\n").unwrap();
        let consumed = vec![("grid".to_string(), "n".to_string())];
        let err = cfg.reject_unknown(&consumed).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn typed_errors_carry_context() {
        let cfg = ScenarioConfig::parse("[grid]\nn = four\n").unwrap();
        let err = cfg.section("grid").usize("n").unwrap_err();
        assert!(err.to_string().contains("[grid] n"));
    }
}
