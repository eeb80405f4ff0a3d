//! Compact, query-adapted document representations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::SelectedFeatures;
use crate::extraction::CategoryPath;
pub use crate::text::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    /// The selected pseudo query alone.
    PseudoQuery,
    /// `L1 -> L2 -> L3`
    Category,
    /// `L1 -> L2 -> L3: <section>`
    CategorySection,
    /// `L1 -> L2 -> L3: <section> (<kw1>, ..., <kwK>)`
    #[default]
    CategorySectionKeywords,
}

impl Form {
    pub const ALL: [Form; 4] = [
        Form::PseudoQuery,
        Form::Category,
        Form::CategorySection,
        Form::CategorySectionKeywords,
    ];

    /// 1-based form number.
    pub fn number(self) -> u8 {
        match self {
            Form::PseudoQuery => 1,
            Form::Category => 2,
            Form::CategorySection => 3,
            Form::CategorySectionKeywords => 4,
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::PseudoQuery => "pseudo-query",
            Form::Category => "category",
            Form::CategorySection => "category-section",
            Form::CategorySectionKeywords => "category-section-keywords",
        })
    }
}

impl FromStr for Form {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Form::ALL
            .into_iter()
            .find(|f| f.to_string() == s || f.number().to_string() == s)
            .ok_or_else(|| format!("unknown form {s:?} (expected 1-4 or a form name)"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("form {form} needs a non-empty {field}")]
pub struct RepresentationError {
    pub form: Form,
    pub field: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactRepresentation {
    pub doc_id: String,
    pub form: Form,
    pub text: String,
    pub token_estimate: usize,
}

pub fn build_representation(
    doc_id: &str,
    form: Form,
    category: &CategoryPath,
    selected: &SelectedFeatures,
) -> Result<CompactRepresentation, RepresentationError> {
    let need = |field: &'static str, value: &str| {
        if value.trim().is_empty() {
            Err(RepresentationError { form, field })
        } else {
            Ok(())
        }
    };
    let text = match form {
        Form::PseudoQuery => {
            need("pseudo_query", &selected.pseudo_query)?;
            selected.pseudo_query.trim().to_string()
        }
        Form::Category => category.arrow_joined(),
        Form::CategorySection | Form::CategorySectionKeywords => {
            need("section", &selected.section)?;
            let mut text = format!("{}: {}", category.arrow_joined(), selected.section.trim());
            if form == Form::CategorySectionKeywords && !selected.keywords.is_empty() {
                text.push_str(&format!(" ({})", selected.keywords.join(", ")));
            }
            text
        }
    };
    Ok(CompactRepresentation {
        doc_id: doc_id.to_string(),
        form,
        token_estimate: count_tokens(&text),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sel(keywords: &[&str]) -> SelectedFeatures {
        SelectedFeatures {
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            section: "Results".into(),
            pseudo_query: "what works".into(),
            similarity_scores: vec![],
        }
    }

    fn path() -> CategoryPath {
        CategoryPath::new(["A".into(), "B".into(), "C".into()]).unwrap()
    }

    #[test]
    fn forms_render() {
        let s = sel(&["k1", "k2"]);
        let r = |f| build_representation("d", f, &path(), &s).unwrap().text;
        assert_eq!(r(Form::PseudoQuery), "what works");
        assert_eq!(r(Form::Category), "A -> B -> C");
        assert_eq!(r(Form::CategorySection), "A -> B -> C: Results");
        assert_eq!(r(Form::CategorySectionKeywords), "A -> B -> C: Results (k1, k2)");
    }

    #[test]
    fn no_keywords_degenerates_to_form3() {
        let s = sel(&[]);
        let f3 = build_representation("d", Form::CategorySection, &path(), &s).unwrap();
        let f4 = build_representation("d", Form::CategorySectionKeywords, &path(), &s).unwrap();
        assert_eq!(f3.text, f4.text);
    }

    #[test]
    fn missing_field_named() {
        let mut s = sel(&["k"]);
        s.pseudo_query = " ".into();
        assert_eq!(
            build_representation("d", Form::PseudoQuery, &path(), &s).unwrap_err(),
            RepresentationError { form: Form::PseudoQuery, field: "pseudo_query" }
        );
    }

    #[test]
    fn form_parsing() {
        assert_eq!("4".parse::<Form>().unwrap(), Form::CategorySectionKeywords);
        assert_eq!("category".parse::<Form>().unwrap(), Form::Category);
        assert!("5".parse::<Form>().is_err());
    }
}
