//! Tolerant parsers that turn free-form model answers into feature lists.
//!
//! Every parser either returns a value satisfying the feature invariants or
//! an error carrying the raw response.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{CategoryPath, ExtractionError, Feature};

/// A parsed value plus soft-bound warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:[-*•+]\s+|\(?\d{1,3}[.):]\s*|#{1,6}\s+|[A-Za-z][.)]\s+)").unwrap()
});
static NUMBERED_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:section|query|keyword|heading)\s*\d+\s*[:.)-]\s*").unwrap()
});
static LEADING_BOLD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\*\*|__)(.+?)(?:\*\*|__)").unwrap());
static BOLD_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\*\*|__)(.+?)(?:\*\*|__)\s*:").unwrap());
static INLINE_ENUM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|\s)([1-9])[.)]\s+").unwrap());

fn has_marker(line: &str) -> bool {
    LIST_MARKER.is_match(line) || NUMBERED_LABEL.is_match(line.trim_start())
}

fn strip_marker(line: &str) -> &str {
    let s = match LIST_MARKER.find(line) {
        Some(m) => &line[m.end()..],
        None => line,
    };
    let s = s.trim_start();
    match NUMBERED_LABEL.find(s) {
        Some(m) => &s[m.end()..],
        None => s,
    }
}

const QUOTES: &[char] = &['"', '\'', '`', '“', '”', '‘', '’'];

/// Trims emphasis, quotes and trailing separators.
fn clean(item: &str) -> String {
    let mut s = item.trim().to_string();
    loop {
        let before = s.clone();
        s = s.trim_matches('*').trim().to_string();
        for wrap in ["__", "_"] {
            if s.len() > 2 * wrap.len() && s.starts_with(wrap) && s.ends_with(wrap) {
                s = s[wrap.len()..s.len() - wrap.len()].trim().to_string();
            }
        }
        s = s
            .trim_matches(QUOTES)
            .trim_end_matches([',', ';'])
            .trim()
            .to_string();
        if s == before {
            return s;
        }
    }
}

/// For `**Heading**: description` keep only the emphasized heading.
fn heading_of(item: &str) -> String {
    match LEADING_BOLD.captures(item.trim()) {
        Some(c) => clean(c[1].trim_end_matches(':')),
        None => clean(item),
    }
}

/// Trim, drop empties, dedupe case-insensitively keeping the first spelling.
pub fn normalize_list<I, S>(items: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    items
        .into_iter()
        .map(|s| s.as_ref().trim().to_string())
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.to_lowercase()))
        .collect()
}

/// One item per line. When the answer contains list markers, unmarked lines
/// are treated as commentary and dropped.
fn line_items(raw: &str) -> Vec<String> {
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let any_marked = lines.iter().any(|l| has_marker(l));
    lines
        .into_iter()
        .filter(|l| !any_marked || has_marker(l))
        .filter(|l| any_marked || !l.trim_end().ends_with(':'))
        .map(|l| heading_of(strip_marker(l)))
        .collect()
}

fn soft_bounds(feature: Feature, n: usize, min: usize, max: Option<usize>) -> Vec<String> {
    let mut w = Vec::new();
    if n < min {
        w.push(format!("{}: only {n} item(s), expected at least {min}", feature.name()));
    }
    if let Some(max) = max.filter(|&m| n > m) {
        w.push(format!("{}: {n} items, expected at most {max}", feature.name()));
    }
    w
}

fn non_empty(feature: Feature, raw: &str, items: Vec<String>) -> Result<Vec<String>, ExtractionError> {
    let items = normalize_list(items);
    if items.is_empty() {
        Err(ExtractionError::Parse {
            feature,
            message: "no items found".into(),
            raw: raw.to_string(),
        })
    } else {
        Ok(items)
    }
}

pub fn parse_sections(raw: &str) -> Result<Parsed<Vec<String>>, ExtractionError> {
    let items = non_empty(Feature::Sections, raw, line_items(raw))?;
    let warnings = soft_bounds(Feature::Sections, items.len(), 3, Some(8));
    Ok(Parsed { value: items, warnings })
}

pub fn parse_pseudo_queries(raw: &str) -> Result<Parsed<Vec<String>>, ExtractionError> {
    let items = non_empty(Feature::PseudoQueries, raw, line_items(raw))?;
    let warnings = soft_bounds(Feature::PseudoQueries, items.len(), 20, Some(20));
    Ok(Parsed { value: items, warnings })
}

/// Splits on commas and semicolons that are not inside parentheses.
fn split_terms(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in line.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' | ';' if depth <= 0 => {
                out.push(&line[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&line[start..]);
    out
}

/// Drops a leading `Keywords:`-style label.
fn strip_keyword_label(line: &str) -> &str {
    if let Some((head, rest)) = line.split_once(':') {
        let h = head.to_lowercase();
        if !head.contains(',')
            && ["keyword", "concept", "term", "here"].iter().any(|k| h.contains(k))
        {
            return rest;
        }
    }
    line
}

pub fn parse_keywords(raw: &str) -> Result<Parsed<Vec<String>>, ExtractionError> {
    let mut terms = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let line = strip_marker(line).trim();
        // group headers such as "Specific terms:" carry no terms of their own
        let header = clean(line);
        if header.ends_with(':') && !header.contains(',') {
            continue;
        }
        let body = strip_keyword_label(line).trim();
        let body = match BOLD_LABEL.captures(body) {
            Some(c) => c[1].to_string(),
            None => body.to_string(),
        };
        terms.extend(split_terms(&body).into_iter().map(clean));
    }
    let items = non_empty(Feature::Keywords, raw, terms)?;
    let warnings = soft_bounds(Feature::Keywords, items.len(), 30, None);
    Ok(Parsed { value: items, warnings })
}

const CATEGORY_LABEL_HINTS: &[&str] = &[
    "category", "topic", "description", "title", "level", "broad", "specific", "fine", "coarse",
];

/// Drops a leading label such as `Broad category:`.
fn strip_category_label(item: &str) -> &str {
    if let Some((head, rest)) = item.split_once(':') {
        let h = head.to_lowercase();
        if h.split_whitespace().count() <= 6 && CATEGORY_LABEL_HINTS.iter().any(|k| h.contains(k)) {
            return rest;
        }
    }
    item
}

fn category_level(item: &str) -> String {
    let s = clean(strip_category_label(&heading_of(item)));
    clean(s.trim_end_matches('.'))
}

fn levels_from(parts: Vec<String>) -> Option<[String; 3]> {
    let parts: Vec<String> = parts.into_iter().filter(|p| !p.is_empty()).collect();
    if parts.len() < 3 {
        return None;
    }
    let tail = parts[2..].join(" -> ");
    Some([parts[0].clone(), parts[1].clone(), tail])
}

fn arrow_form(raw: &str) -> Option<[String; 3]> {
    raw.lines().find_map(|line| {
        let line = line.replace('→', "->");
        if !line.contains("->") {
            return None;
        }
        let line = strip_marker(&line);
        levels_from(line.split("->").map(category_level).collect())
    })
}

fn enumerated_form(raw: &str) -> Option<[String; 3]> {
    let numbered: Vec<String> = raw
        .lines()
        .filter(|l| LIST_MARKER.is_match(l))
        .map(|l| category_level(strip_marker(l)))
        .collect();
    if let Some(levels) = levels_from(numbered.into_iter().take(3).collect()) {
        return Some(levels);
    }
    // "1. A 2. B 3. C" on one line
    let flat = raw.replace('\n', " ");
    let marks: Vec<_> = INLINE_ENUM.captures_iter(&flat).collect();
    let mut spans = Vec::new();
    let mut expected = 1;
    for (i, cap) in marks.iter().enumerate() {
        if cap[1].parse::<usize>().ok() != Some(expected) {
            continue;
        }
        let start = cap.get(0).unwrap().end();
        let end = marks
            .get(i + 1)
            .map_or(flat.len(), |next| next.get(0).unwrap().start());
        spans.push(category_level(&flat[start..end]));
        expected += 1;
        if expected > 3 {
            break;
        }
    }
    levels_from(spans)
}

pub fn parse_category(raw: &str) -> Result<CategoryPath, ExtractionError> {
    let levels = arrow_form(raw)
        .or_else(|| enumerated_form(raw))
        .ok_or_else(|| ExtractionError::Parse {
            feature: Feature::Category,
            message: "fewer than 3 category levels".into(),
            raw: raw.to_string(),
        })?;
    CategoryPath::new(levels).map_err(|_| ExtractionError::Parse {
        feature: Feature::Category,
        message: "empty category level".into(),
        raw: raw.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_arrow() {
        let c = parse_category(
            "NLP -> Text Generation -> Controllable Multi-Attribute Generation",
        )
        .unwrap();
        assert_eq!(
            c.levels().as_slice(),
            ["NLP", "Text Generation", "Controllable Multi-Attribute Generation"]
        );
    }

    #[test]
    fn category_arrow_with_label_and_unicode() {
        let c = parse_category("Category path: **Biology** → Genomics → CRISPR screens.").unwrap();
        assert_eq!(c.levels().as_slice(), ["Biology", "Genomics", "CRISPR screens"]);
    }

    #[test]
    fn category_numbered_lines() {
        let raw = "Here is the analysis:\n1. Broad category: NLP\n2. Specific category: Text Generation\n3. Topic: Controllable Multi-Attribute Generation\n";
        let c = parse_category(raw).unwrap();
        assert_eq!(
            c.levels().as_slice(),
            ["NLP", "Text Generation", "Controllable Multi-Attribute Generation"]
        );
    }

    #[test]
    fn category_inline_enumeration() {
        let c = parse_category("1. Physics 2. Optics 3. Metasurface lenses for imaging").unwrap();
        assert_eq!(c.levels().as_slice(), ["Physics", "Optics", "Metasurface lenses for imaging"]);
    }

    #[test]
    fn category_extra_arrows_fold_into_topic() {
        let c = parse_category("A -> B -> C -> D").unwrap();
        assert_eq!(c.levels().as_slice(), ["A", "B", "C -> D"]);
    }

    #[test]
    fn category_single_phrase_fails() {
        let e = parse_category("just one phrase").unwrap_err();
        match e {
            ExtractionError::Parse { raw, .. } => assert_eq!(raw, "just one phrase"),
            other => panic!("unexpected {other}"),
        }
        assert!(parse_category("A -> B").is_err());
    }

    #[test]
    fn sections_numbered() {
        let raw = "Here are the sections:\n1. Introduction\n2. Related Work\n3) Method\n4. **Experiments**: results on benchmarks\n5. Conclusion\n";
        let p = parse_sections(raw).unwrap();
        assert_eq!(
            p.value,
            vec!["Introduction", "Related Work", "Method", "Experiments", "Conclusion"]
        );
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn sections_short_list_warns() {
        let p = parse_sections("- Background\n- Findings").unwrap();
        assert_eq!(p.value.len(), 2);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn sections_empty_fails() {
        assert!(parse_sections("").is_err());
        assert!(parse_sections("   \n  ").is_err());
    }

    #[test]
    fn sections_markdown_headings() {
        let p = parse_sections("## Section 1: Overview\n## Section 2: Design\n## Section 3: Results").unwrap();
        assert_eq!(p.value, vec!["Overview", "Design", "Results"]);
    }

    #[test]
    fn keywords_dedup_case_insensitive() {
        let mut terms: Vec<String> = (0..34).map(|i| format!("term{i}")).collect();
        terms.push("TERM3".into());
        let p = parse_keywords(&terms.join(", ")).unwrap();
        assert_eq!(p.value.len(), 34);
        assert_eq!(p.value[3], "term3");
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn keywords_short_list_warns() {
        let terms: Vec<String> = (0..12).map(|i| format!("k{i}")).collect();
        let p = parse_keywords(&terms.join(",")).unwrap();
        assert_eq!(p.value.len(), 12);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn keywords_label_stripped() {
        assert_eq!(parse_keywords("Keywords: a, b, c").unwrap().value, vec!["a", "b", "c"]);
    }

    #[test]
    fn keywords_lists_and_groups() {
        let raw = "**Specific terms:**\n- Machine Translation (MT, NMT)\n- BLEU\n\nBroader themes:\n1. evaluation; robustness";
        let p = parse_keywords(raw).unwrap();
        assert_eq!(
            p.value,
            vec!["Machine Translation (MT, NMT)", "BLEU", "evaluation", "robustness"]
        );
    }

    #[test]
    fn keywords_bold_label_and_definition() {
        let p = parse_keywords("**Keywords:** a, b\n- **CGA**: a conditional VAE").unwrap();
        assert_eq!(p.value, vec!["a", "b", "CGA"]);
    }

    #[test]
    fn keywords_empty_fails() {
        assert!(parse_keywords("Keywords:").is_err());
    }

    #[test]
    fn queries_trio() {
        let raw: String = (1..=20).map(|i| format!("{i}. \"query number {i}\"\n")).collect();
        let p = parse_pseudo_queries(&raw).unwrap();
        assert_eq!(p.value.len(), 20);
        assert_eq!(p.value[0], "query number 1");
        assert!(p.warnings.is_empty());
        let p = parse_pseudo_queries("1. a\n2. b").unwrap();
        assert_eq!(p.value.len(), 2);
        assert_eq!(p.warnings.len(), 1);
        assert!(parse_pseudo_queries("").is_err());
    }
}
