use serde::{Deserialize, Serialize};

pub const PATTERN_LABEL: &str = "Experience Pattern:";
pub const ORDERING_LABEL: &str = "Test Ordering Experience:";
pub const DECISION_LABEL: &str = "Diagnostic Decision Experience:";

/// The three text fields of a consolidated experience record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcpFields {
    pub pattern: String,
    pub ordering: String,
    pub decision: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("consolidation output has no usable `{section}` section")]
pub struct ConsolidationParseError {
    pub section: &'static str,
}

/// Strips markdown decoration (`**`, `#`, `-`) that models like to put in
/// front of section labels.
fn label_at(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '#' | '-'));
    for (i, label) in [PATTERN_LABEL, ORDERING_LABEL, DECISION_LABEL].iter().enumerate() {
        let bare = &label[..label.len() - 1];
        if let Some(rest) = trimmed.strip_prefix(bare) {
            let rest = rest.trim_start_matches('*');
            if let Some(rest) = rest.strip_prefix(':') {
                return Some((i, rest.trim_start_matches('*')));
            }
        }
    }
    None
}

/// Extracts the three sections. Each section runs from its label to the next
/// label; the first occurrence of a label wins and all three must be
/// non-empty.
pub fn parse_dcp(raw: &str) -> Result<DcpFields, ConsolidationParseError> {
    let mut fields: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        if let Some((idx, rest)) = label_at(line) {
            if fields[idx].is_none() {
                fields[idx] = Some(rest.trim().to_string());
                current = Some(idx);
            } else {
                current = None;
            }
            continue;
        }
        if let Some(idx) = current {
            let f = fields[idx].as_mut().expect("open section");
            if !f.is_empty() {
                f.push('\n');
            }
            f.push_str(line.trim_end());
        }
    }
    let mut take = |idx: usize, section: &'static str| {
        fields[idx]
            .take()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or(ConsolidationParseError { section })
    };
    Ok(DcpFields {
        pattern: take(0, "Experience Pattern")?,
        ordering: take(1, "Test Ordering Experience")?,
        decision: take(2, "Diagnostic Decision Experience")?,
    })
}

pub fn render_dcp(fields: &DcpFields) -> String {
    format!(
        "{PATTERN_LABEL} {}\n{ORDERING_LABEL} {}\n{DECISION_LABEL} {}",
        fields.pattern, fields.ordering, fields.decision
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_output() {
        let raw = "Experience Pattern: RUQ pain after fatty meal, fever.\n\
                   Test Ordering Experience: Physical Examination; then Laboratory Tests: CBC, LFT;\n\
                   then Imaging: modality=Ultrasound, region=Abdomen.\n\
                   Diagnostic Decision Experience: Murphy sign plus wall thickening favours cholecystitis.";
        let d = parse_dcp(raw).unwrap();
        assert_eq!(d.pattern, "RUQ pain after fatty meal, fever.");
        assert!(d.ordering.ends_with("region=Abdomen."));
        assert!(d.ordering.contains('\n'));
        assert!(d.decision.starts_with("Murphy"));
        assert_eq!(parse_dcp(&render_dcp(&d)).unwrap(), d);
    }

    #[test]
    fn tolerates_markdown_labels() {
        let raw = "**Experience Pattern:** a\n## Test Ordering Experience: b\n- **Diagnostic Decision Experience**: c";
        let d = parse_dcp(raw).unwrap();
        assert_eq!(
            (d.pattern.as_str(), d.ordering.as_str(), d.decision.as_str()),
            ("a", "b", "c")
        );
    }

    #[test]
    fn missing_or_empty_section_fails() {
        let err = parse_dcp("Experience Pattern: a\nDiagnostic Decision Experience: c").unwrap_err();
        assert_eq!(err.section, "Test Ordering Experience");
        let err = parse_dcp("Experience Pattern:\nTest Ordering Experience: b\nDiagnostic Decision Experience: c")
            .unwrap_err();
        assert_eq!(err.section, "Experience Pattern");
        assert!(parse_dcp("free text").is_err());
    }
}
