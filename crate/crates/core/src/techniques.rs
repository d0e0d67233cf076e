//! The closed taxonomy of 14 propaganda techniques.
//!
//! Canonical identifiers are byte-stable: they appear as TSV tokens, report
//! row keys and in model output contracts. Three of them contain a literal
//! comma, so nothing in this crate ever splits a label on commas.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Shipped technique cards (identifier, definition, example).
pub const CARDS_TSV: &str = include_str!("../data/techniques.tsv");

/// One of the 14 canonical propaganda techniques, in appendix-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Technique {
    AppealToAuthority,
    AppealToFearPrejudice,
    BandwagonReductioAdHitlerum,
    BlackAndWhiteFallacy,
    CausalOversimplification,
    Doubt,
    ExaggerationMinimisation,
    FlagWaving,
    LoadedLanguage,
    NameCallingLabeling,
    Repetition,
    Slogans,
    ThoughtTerminatingCliches,
    WhataboutismStrawMenRedHerring,
}

const ALL: [Technique; 14] = [
    Technique::AppealToAuthority,
    Technique::AppealToFearPrejudice,
    Technique::BandwagonReductioAdHitlerum,
    Technique::BlackAndWhiteFallacy,
    Technique::CausalOversimplification,
    Technique::Doubt,
    Technique::ExaggerationMinimisation,
    Technique::FlagWaving,
    Technique::LoadedLanguage,
    Technique::NameCallingLabeling,
    Technique::Repetition,
    Technique::Slogans,
    Technique::ThoughtTerminatingCliches,
    Technique::WhataboutismStrawMenRedHerring,
];

/// All techniques in table order. Stable across calls.
pub fn all_techniques() -> &'static [Technique; 14] {
    &ALL
}

impl Technique {
    pub const COUNT: usize = 14;

    /// Canonical identifier, e.g. `Name_Calling,Labeling`.
    pub fn identifier(self) -> &'static str {
        match self {
            Technique::AppealToAuthority => "Appeal_to_Authority",
            Technique::AppealToFearPrejudice => "Appeal_to_fear-prejudice",
            Technique::BandwagonReductioAdHitlerum => "Bandwagon,Reductio_ad_hitlerum",
            Technique::BlackAndWhiteFallacy => "Black-and-White_Fallacy",
            Technique::CausalOversimplification => "Causal_Oversimplification",
            Technique::Doubt => "Doubt",
            Technique::ExaggerationMinimisation => "Exaggeration,Minimisation",
            Technique::FlagWaving => "Flag-Waving",
            Technique::LoadedLanguage => "Loaded_Language",
            Technique::NameCallingLabeling => "Name_Calling,Labeling",
            Technique::Repetition => "Repetition",
            Technique::Slogans => "Slogans",
            Technique::ThoughtTerminatingCliches => "Thought-terminating_Cliches",
            Technique::WhataboutismStrawMenRedHerring => "Whataboutism,Straw_Men,Red_Herring",
        }
    }

    /// Position in table order (0..14).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Technique> {
        ALL.get(index).copied()
    }

    /// Exact lookup by canonical identifier (no folding).
    pub fn from_identifier(id: &str) -> Option<Technique> {
        ALL.iter().copied().find(|t| t.identifier() == id)
    }

    pub fn card(self) -> &'static TechniqueCard {
        card(self)
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.identifier())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown technique identifier: {0:?}")]
pub struct UnknownTechnique(pub String);

impl FromStr for Technique {
    type Err = UnknownTechnique;

    /// Strict parse of a canonical identifier. Use [`normalize`] for model
    /// output and other free-form text.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::from_identifier(s).ok_or_else(|| UnknownTechnique(s.to_string()))
    }
}

impl Serialize for Technique {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.identifier())
    }
}

impl<'de> Deserialize<'de> for Technique {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fold a label string into its comparison key.
///
/// Lowercases, treats `_`, `-` and whitespace as one separator, drops
/// separators adjacent to commas, and trims surrounding punctuation and
/// quotes.
pub fn fold_label(raw: &str) -> String {
    let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
    let mut out = String::with_capacity(trimmed.len());
    let mut pending_sep = false;
    for c in trimmed.chars() {
        if c == '_' || c == '-' || c.is_whitespace() {
            pending_sep = true;
            continue;
        }
        if c == ',' {
            pending_sep = false;
            out.push(',');
            continue;
        }
        if pending_sep && !out.is_empty() && !out.ends_with(',') {
            out.push(' ');
        }
        pending_sep = false;
        out.extend(c.to_lowercase());
    }
    out
}

fn folded_index() -> &'static BTreeMap<String, Technique> {
    static INDEX: OnceLock<BTreeMap<String, Technique>> = OnceLock::new();
    INDEX.get_or_init(|| {
        ALL.iter()
            .map(|t| (fold_label(t.identifier()), *t))
            .collect()
    })
}

/// Map a free-form label onto the closed set, or `None` when it folds to
/// nothing or to a string outside the taxonomy.
pub fn normalize(raw: &str) -> Option<Technique> {
    let key = fold_label(raw);
    if key.is_empty() {
        return None;
    }
    folded_index().get(&key).copied()
}

/// Definition and few-shot example for one technique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TechniqueCard {
    pub technique: Technique,
    pub definition: String,
    pub example: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CardsError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: unknown technique identifier {id:?}")]
    Unknown { line: usize, id: String },
    #[error("line {line}: empty definition or example")]
    Empty { line: usize },
    #[error("line {line}: duplicate card for {technique}")]
    Duplicate { line: usize, technique: Technique },
    #[error("missing card for {0}")]
    Missing(Technique),
}

/// Parse a technique-card file: UTF-8, one `identifier TAB definition TAB
/// example` record per line, `#` comment lines ignored. Cards come back in
/// table order and must cover all 14 techniques exactly once.
pub fn parse_cards(text: &str) -> Result<Vec<TechniqueCard>, CardsError> {
    let mut slots: Vec<Option<TechniqueCard>> = vec![None; Technique::COUNT];
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CardsError::FieldCount { line: line_no, found: fields.len() });
        }
        let technique = Technique::from_identifier(fields[0]).ok_or_else(|| CardsError::Unknown {
            line: line_no,
            id: fields[0].to_string(),
        })?;
        if fields[1].trim().is_empty() || fields[2].trim().is_empty() {
            return Err(CardsError::Empty { line: line_no });
        }
        let slot = &mut slots[technique.index()];
        if slot.is_some() {
            return Err(CardsError::Duplicate { line: line_no, technique });
        }
        *slot = Some(TechniqueCard {
            technique,
            definition: fields[1].to_string(),
            example: fields[2].to_string(),
        });
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| slot.ok_or(CardsError::Missing(ALL[i])))
        .collect()
}

/// The shipped cards, in table order.
pub fn cards() -> &'static [TechniqueCard] {
    static CARDS: OnceLock<Vec<TechniqueCard>> = OnceLock::new();
    CARDS.get_or_init(|| parse_cards(CARDS_TSV).expect("shipped technique cards are valid"))
}

/// Card for one technique.
pub fn card(t: Technique) -> &'static TechniqueCard {
    &cards()[t.index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn table_order_and_size() {
        let all = all_techniques();
        assert_eq!(all.len(), 14);
        assert_eq!(all[0].identifier(), "Appeal_to_Authority");
        assert_eq!(all[13].identifier(), "Whataboutism,Straw_Men,Red_Herring");
        assert_eq!(all_techniques(), all_techniques());
        let ids: HashSet<_> = all.iter().map(|t| t.identifier()).collect();
        assert_eq!(ids.len(), 14);
        for (i, t) in all.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(Technique::from_index(i), Some(*t));
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("loaded language"), Some(Technique::LoadedLanguage));
        assert_eq!(normalize("Name_Calling,Labeling"), Some(Technique::NameCallingLabeling));
        assert_eq!(normalize("Fearmongering"), None);
        assert_eq!(normalize(""), None);
        assert_eq!(normalize("  \"...\" "), None);
    }

    #[test]
    fn normalize_tolerates_quotes_and_comma_spacing() {
        assert_eq!(normalize("\"Doubt\"."), Some(Technique::Doubt));
        assert_eq!(normalize("`flag waving`"), Some(Technique::FlagWaving));
        assert_eq!(
            normalize("Name Calling, Labeling"),
            Some(Technique::NameCallingLabeling)
        );
        assert_eq!(
            normalize("WHATABOUTISM, STRAW MEN, RED HERRING"),
            Some(Technique::WhataboutismStrawMenRedHerring)
        );
        assert_eq!(normalize("black and white fallacy"), Some(Technique::BlackAndWhiteFallacy));
        // Partial names are not fuzzily completed.
        assert_eq!(normalize("Name_Calling"), None);
        assert_eq!(normalize("Whataboutism"), None);
    }

    #[test]
    fn folded_keys_are_unambiguous() {
        let keys: HashSet<String> = ALL.iter().map(|t| fold_label(t.identifier())).collect();
        assert_eq!(keys.len(), 14);
        assert_eq!(folded_index().len(), 14);
    }

    #[test]
    fn normalize_round_trips_every_identifier() {
        for t in all_techniques() {
            let id = t.identifier();
            assert_eq!(normalize(id), Some(*t));
            assert_eq!(normalize(&id.to_uppercase()), Some(*t));
            assert_eq!(normalize(&id.replace('_', " ")), Some(*t));
            assert_eq!(normalize(&id.to_lowercase().replace('-', "_")), Some(*t));
        }
    }

    #[test]
    fn cards_match_table() {
        assert_eq!(card(Technique::Slogans).example, "Make America great again!");
        assert_eq!(card(Technique::Doubt).example, "Is he ready to be the Mayor?");
        assert!(card(Technique::LoadedLanguage)
            .definition
            .starts_with("Uses specific phrases and words"));
        let mut seen = HashSet::new();
        for t in all_techniques() {
            let c = card(*t);
            assert_eq!(c.technique, *t);
            assert!(!c.definition.is_empty() && !c.example.is_empty());
            assert!(seen.insert((c.definition.clone(), c.example.clone())));
        }
    }

    #[test]
    fn card_file_errors() {
        assert_eq!(
            parse_cards("Doubt\tonly two"),
            Err(CardsError::FieldCount { line: 1, found: 2 })
        );
        assert!(matches!(parse_cards("Nope\ta\tb"), Err(CardsError::Unknown { line: 1, .. })));
        let dup = format!("{CARDS_TSV}Doubt\tx\ty\n");
        assert!(matches!(parse_cards(&dup), Err(CardsError::Duplicate { .. })));
        assert_eq!(
            parse_cards("Doubt\ta\tb\n"),
            Err(CardsError::Missing(Technique::AppealToAuthority))
        );
    }

    #[test]
    fn serde_uses_identifier() {
        let json = serde_json::to_string(&Technique::NameCallingLabeling).unwrap();
        assert_eq!(json, "\"Name_Calling,Labeling\"");
        let back: Technique = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Technique::NameCallingLabeling);
        assert!(serde_json::from_str::<Technique>("\"loaded language\"").is_err());
    }
}
