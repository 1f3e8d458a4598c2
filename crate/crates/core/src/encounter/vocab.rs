//! Lab canonicalization and imaging alias tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::VocabError;

const BUILTIN_CANON_MAP: &str = include_str!("../../assets/canon_map.tsv");
const BUILTIN_IMAGING_ALIASES: &str = include_str!("../../assets/imaging_aliases.toml");

/// Lowercases, trims and collapses internal whitespace.
pub(crate) fn fold_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Versioned mapping from source lab codes or names to canonical category ids.
///
/// Lookups are case-insensitive. Names absent from the map resolve to
/// themselves, so the mapping is total. Maps are validated at load time to be
/// idempotent: every canonical id that also appears as a source maps to itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonMap {
    version: String,
    entries: BTreeMap<String, String>,
}

impl CanonMap {
    pub fn builtin() -> Self {
        Self::parse_tsv(BUILTIN_CANON_MAP).expect("builtin canonicalization map is valid")
    }

    /// An empty map where every name is its own canonical id.
    pub fn identity(version: impl Into<String>) -> Self {
        Self {
            version: version.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_tsv(&text)
    }

    /// Parses the two-column TSV format: a `# version: <tag>` comment line, a
    /// `source_code\tcanonical_id` header, then one mapping per line.
    pub fn parse_tsv(text: &str) -> Result<Self, VocabError> {
        let mut version = None;
        let mut saw_header = false;
        let mut map = Self::identity("");
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = Some(v.trim().to_string());
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !saw_header {
                if cols.len() != 2 || cols[0].trim() != "source_code" || cols[1].trim() != "canonical_id" {
                    return Err(VocabError::CanonMap {
                        line: lineno + 1,
                        message: "expected header `source_code\\tcanonical_id`".into(),
                    });
                }
                saw_header = true;
                continue;
            }
            if cols.len() != 2 || cols[0].trim().is_empty() || cols[1].trim().is_empty() {
                return Err(VocabError::CanonMap {
                    line: lineno + 1,
                    message: "expected two non-empty tab-separated columns".into(),
                });
            }
            map.entries.insert(fold_key(cols[0]), cols[1].trim().to_string());
        }
        map.version = version.ok_or(VocabError::CanonMap {
            line: 0,
            message: "missing `# version:` comment line".into(),
        })?;
        map.check_idempotent()?;
        Ok(map)
    }

    /// Adds a mapping, rejecting it if the result would not be idempotent.
    pub fn insert(&mut self, source: &str, canonical: &str) -> Result<(), VocabError> {
        let previous = self.entries.insert(fold_key(source), canonical.trim().to_string());
        if let Err(err) = self.check_idempotent() {
            match previous {
                Some(p) => self.entries.insert(fold_key(source), p),
                None => self.entries.remove(&fold_key(source)),
            };
            return Err(err);
        }
        Ok(())
    }

    fn check_idempotent(&self) -> Result<(), VocabError> {
        for (source, canonical) in &self.entries {
            if let Some(next) = self.entries.get(&fold_key(canonical)) {
                if !next.eq_ignore_ascii_case(canonical) {
                    return Err(VocabError::CanonMap {
                        line: 0,
                        message: format!("mapping is not idempotent: `{source}` -> `{canonical}` -> `{next}`"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical id for `name`, falling back to the trimmed name itself.
    pub fn canonical(&self, name: &str) -> String {
        match self.entries.get(&fold_key(name)) {
            Some(c) => c.clone(),
            None => name.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }

    /// Case-folded canonical id, suitable for set comparisons.
    pub fn key(&self, name: &str) -> String {
        fold_key(&self.canonical(name))
    }
}

#[derive(Debug, Deserialize)]
struct AliasFile {
    #[serde(default)]
    modality: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    region: BTreeMap<String, Vec<String>>,
}

/// Modality and region alias tables for imaging requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagingAliases {
    modality: BTreeMap<String, String>,
    region: BTreeMap<String, String>,
}

impl ImagingAliases {
    pub fn builtin() -> Self {
        Self::parse_toml(BUILTIN_IMAGING_ALIASES).expect("builtin imaging aliases are valid")
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_toml(&text)
    }

    pub fn parse_toml(text: &str) -> Result<Self, VocabError> {
        let file: AliasFile = toml::from_str(text).map_err(|e| VocabError::Aliases(e.to_string()))?;
        let build = |table: BTreeMap<String, Vec<String>>| -> Result<BTreeMap<String, String>, VocabError> {
            let mut out = BTreeMap::new();
            for (canonical, aliases) in table {
                for alias in std::iter::once(&canonical).chain(aliases.iter()) {
                    if let Some(prev) = out.insert(fold_key(alias), canonical.clone()) {
                        if prev != canonical {
                            return Err(VocabError::Aliases(format!(
                                "alias `{alias}` maps to both `{prev}` and `{canonical}`"
                            )));
                        }
                    }
                }
            }
            Ok(out)
        };
        Ok(Self {
            modality: build(file.modality)?,
            region: build(file.region)?,
        })
    }

    /// Canonical modality for an alias, if known.
    pub fn modality(&self, text: &str) -> Option<&str> {
        self.modality
            .get(&fold_key(text.trim_matches(|c: char| c == '.' || c == ',')))
            .map(String::as_str)
    }

    /// Splits a `<REGION> <MODALITY>` request into `(region, canonical modality)`.
    ///
    /// The modality is the longest trailing token run found in the alias
    /// table; everything before it is the region, which must be non-empty.
    /// The `modality=<M>, region=<R>` template form is accepted as well.
    pub fn split_request(&self, input: &str) -> Option<(String, String)> {
        if input.contains("modality=") && input.contains("region=") {
            let mut modality = None;
            let mut region = None;
            for part in input.split(',') {
                if let Some((k, v)) = part.split_once('=') {
                    match k.trim() {
                        "modality" => modality = self.modality(v).map(str::to_string),
                        "region" => region = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            return match (region, modality) {
                (Some(r), Some(m)) if !r.is_empty() => Some((r, m)),
                _ => None,
            };
        }
        let cleaned = input.trim().trim_end_matches('.');
        let tokens: Vec<&str> = cleaned.split_whitespace().collect();
        for len in (1..tokens.len()).rev() {
            let split = tokens.len() - len;
            if let Some(m) = self.modality(&tokens[split..].join(" ")) {
                let region = tokens[..split]
                    .join(" ")
                    .trim_matches(|c: char| c == ',' || c == '-' || c == ':')
                    .trim()
                    .to_string();
                if !region.is_empty() {
                    return Some((region, m.to_string()));
                }
            }
        }
        None
    }

    /// Canonical region for an alias; unknown regions are returned trimmed.
    pub fn region(&self, text: &str) -> String {
        let cleaned = text.trim_matches(|c: char| c == '.' || c == ',' || c.is_whitespace());
        match self.region.get(&fold_key(cleaned)) {
            Some(r) => r.clone(),
            None => cleaned.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }
}

/// Everything needed to resolve evidence requests against a record.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub canon: CanonMap,
    pub imaging: ImagingAliases,
}

impl Vocabulary {
    pub fn builtin() -> Self {
        Self {
            canon: CanonMap::builtin(),
            imaging: ImagingAliases::builtin(),
        }
    }

    /// Normalized `(modality, region)` comparison key, case-folded.
    pub fn imaging_key(&self, modality: &str, region: &str) -> ImagingKey {
        let modality = self
            .imaging
            .modality(modality)
            .map(str::to_string)
            .unwrap_or_else(|| modality.trim().to_string());
        ImagingKey {
            modality: fold_key(&modality),
            region: fold_key(&self.imaging.region(region)),
        }
    }
}

/// Case-folded `(modality, region)` pair after alias normalization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct ImagingKey {
    pub modality: String,
    pub region: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_map_collapses_components() {
        let map = CanonMap::builtin();
        assert_eq!(map.version(), "canon-v1");
        assert_eq!(map.canonical("WBC"), "CBC");
        assert_eq!(map.canonical("wbc"), "CBC");
        assert_eq!(map.canonical("Troponin"), "Troponin");
        assert_eq!(map.key("Alkaline  Phosphatase"), "lft");
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let map = CanonMap::builtin();
        for name in ["WBC", "Lipase", "ALT", "Troponin", "(Urine) HCG", "cbc"] {
            let once = map.canonical(name);
            assert_eq!(map.canonical(&once), once);
        }
    }

    #[test]
    fn rejects_chained_mappings() {
        let text = "# version: t\nsource_code\tcanonical_id\nA\tB\nB\tC\n";
        assert!(CanonMap::parse_tsv(text).is_err());
        let mut map = CanonMap::identity("t");
        map.insert("WBC", "CBC").unwrap();
        assert!(map.insert("CBC", "Blood").is_err());
        assert_eq!(map.canonical("CBC"), "CBC");
    }

    #[test]
    fn rejects_missing_version_or_header() {
        assert!(CanonMap::parse_tsv("source_code\tcanonical_id\nA\tB\n").is_err());
        assert!(CanonMap::parse_tsv("# version: x\nA\tB\n").is_err());
    }

    #[test]
    fn imaging_alias_normalization() {
        let aliases = ImagingAliases::builtin();
        assert_eq!(aliases.modality("ct"), Some("CT"));
        assert_eq!(aliases.modality("CT scan"), Some("CT"));
        assert_eq!(aliases.modality("US"), Some("Ultrasound"));
        assert_eq!(aliases.modality("Abdomen"), None);
        assert_eq!(aliases.region("abdomen"), "Abdomen");
        assert_eq!(aliases.region("Right Upper Quadrant"), "Abdomen");
        assert_eq!(aliases.region("Left Knee"), "Left Knee");
        let vocab = Vocabulary::builtin();
        assert_eq!(vocab.imaging_key("ct", "abdomen"), vocab.imaging_key("CT", "Abdomen"));
    }

    #[test]
    fn split_request_uses_longest_modality_suffix() {
        let aliases = ImagingAliases::builtin();
        let split = |s: &str| aliases.split_request(s);
        assert_eq!(split("Abdomen CT"), Some(("Abdomen".into(), "CT".into())));
        assert_eq!(
            split("Right Upper Quadrant Ultrasound"),
            Some(("Right Upper Quadrant".into(), "Ultrasound".into()))
        );
        assert_eq!(split("Abdomen CT scan"), Some(("Abdomen".into(), "CT".into())));
        assert_eq!(
            split("Abdomen magnetic resonance cholangiopancreatography"),
            Some(("Abdomen".into(), "MRCP".into()))
        );
        assert_eq!(
            split("modality=Ultrasound, region=Abdomen"),
            Some(("Abdomen".into(), "Ultrasound".into()))
        );
        assert_eq!(split("Abdomen"), None);
        assert_eq!(split("CT"), None);
        assert_eq!(split(""), None);
    }
}
