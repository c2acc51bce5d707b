use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Determiner,
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 6] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adjective,
        PosTag::Adverb,
        PosTag::Determiner,
        PosTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "noun",
            PosTag::Verb => "verb",
            PosTag::Adjective => "adjective",
            PosTag::Adverb => "adverb",
            PosTag::Determiner => "determiner",
            PosTag::Other => "other",
        }
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown part-of-speech tag {s:?}")))
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Copulas and auxiliaries that never count as visual words.
pub const STOPLIST: [&str; 16] = [
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did", "will", "can",
];

/// Word → part-of-speech table, kept in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct PosLexicon {
    entries: Vec<(String, PosTag)>,
    index: HashMap<String, usize>,
}

impl PosLexicon {
    pub fn new(entries: Vec<(String, PosTag)>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (w, _)) in entries.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidSpec(format!("word {w:?} tagged twice")));
            }
        }
        Ok(PosLexicon { entries, index })
    }

    /// Parses `word<TAB>tag` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidSpec(format!("lexicon line {}: expected word<TAB>tag", n + 1)))?;
            entries.push((word.to_string(), tag.trim().parse()?));
        }
        Self::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(|(w, t)| format!("{w}\t{t}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(w, _)| w.as_str())
    }

    pub fn tag(&self, word: &str) -> Option<PosTag> {
        self.index.get(word).map(|&i| self.entries[i].1)
    }

    /// Fails with the sorted list of words that have no tag.
    pub fn check_covers<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let missing: BTreeSet<&str> = words.into_iter().filter(|w| !self.index.contains_key(*w)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::UntaggedWords(missing.into_iter().map(String::from).collect()))
        }
    }

    /// True when `word` has a tag in `visual_tags` and is not a copula/auxiliary.
    pub fn is_visual(&self, word: &str, visual_tags: &[PosTag]) -> Result<bool> {
        let tag = self.tag(word).ok_or_else(|| Error::UnknownToken {
            word: word.to_string(),
            line: None,
        })?;
        Ok(visual_tags.contains(&tag) && !STOPLIST.contains(&word))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_serialize() {
        let text = "a\tdeterminer\nman\tnoun\nis\tverb\ncutting\tverb\n";
        let lex = PosLexicon::parse(text).unwrap();
        assert_eq!(lex.to_tsv(), text);
        assert_eq!(lex.tag("man"), Some(PosTag::Noun));
        let vis = [PosTag::Noun, PosTag::Verb];
        assert!(lex.is_visual("cutting", &vis).unwrap());
        assert!(!lex.is_visual("is", &vis).unwrap());
        assert!(!lex.is_visual("a", &vis).unwrap());
        assert!(!lex.is_visual("cutting", &[PosTag::Noun]).unwrap());
        assert!(lex.is_visual("dog", &vis).is_err());
    }

    #[test]
    fn rejects_duplicates_and_reports_untagged() {
        assert!(PosLexicon::parse("a\tnoun\na\tverb\n").is_err());
        assert!(PosLexicon::parse("a\tpronoun\n").is_err());
        let lex = PosLexicon::parse("a\tdeterminer\n").unwrap();
        match lex.check_covers(["a", "zebra", "cat", "zebra"]) {
            Err(Error::UntaggedWords(w)) => assert_eq!(w, vec!["cat", "zebra"]),
            other => panic!("{other:?}"),
        }
    }
}
