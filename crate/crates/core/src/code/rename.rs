//! Whole-identifier substitutions: renaming and masking.

use std::collections::BTreeSet;

use super::grammar::Language;
use super::snippet::{CodeSnippet, SyntaxError};

/// Reserved lexeme that stands in for a masked identifier. Lexically an
/// identifier, so masked snippets still parse and tokenize.
pub const MASK_SENTINEL: &str = "__MASK__";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenameError {
    #[error("`{0}` is not a renamable identifier of the snippet")]
    NotFound(String),
    #[error("`{0}` already occurs in the snippet")]
    Collision(String),
    #[error("`{0}` is not a legal identifier")]
    IllegalLexeme(String),
    #[error("snippet already contains the mask sentinel")]
    SentinelPresent,
    #[error("renamed snippet no longer parses: {0}")]
    Reparse(#[from] SyntaxError),
    #[error("renaming `{old}` to `{new}` changed the program structure")]
    StructureChanged { old: String, new: String },
}

/// True if `name` may be introduced into `language` source as a fresh name.
pub fn is_legal_identifier(name: &str, language: Language) -> bool {
    let mut chars = name.chars();
    let head_ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !language.is_reserved(name)
        && name != MASK_SENTINEL
}

fn substitute(snippet: &CodeSnippet, old: &str, new: &str) -> Result<String, RenameError> {
    let entry = snippet.identifiers().get(old).ok_or_else(|| RenameError::NotFound(old.to_string()))?;
    let source = snippet.source();
    let tokens = snippet.tokens();
    let mut out = String::with_capacity(source.len() + entry.occurrences.len() * new.len());
    let mut cursor = 0;
    for &index in &entry.occurrences {
        let span = &tokens[index].span;
        out.push_str(&source[cursor..span.start]);
        out.push_str(new);
        cursor = span.end;
    }
    out.push_str(&source[cursor..]);
    Ok(out)
}

/// Replaces every occurrence of `old` with `new`.
///
/// The result is reparsed and must keep the structural digest and the
/// identifier count of the input.
pub fn rename_identifier(snippet: &CodeSnippet, old: &str, new: &str) -> Result<CodeSnippet, RenameError> {
    if !snippet.identifiers().contains(old) {
        return Err(RenameError::NotFound(old.to_string()));
    }
    if !is_legal_identifier(new, snippet.language()) {
        return Err(RenameError::IllegalLexeme(new.to_string()));
    }
    if snippet.identifiers().occupies(new) {
        return Err(RenameError::Collision(new.to_string()));
    }
    let source = substitute(snippet, old, new)?;
    let renamed = CodeSnippet::parse(source, snippet.language())?;
    if renamed.digest() != snippet.digest() || renamed.identifiers().len() != snippet.identifiers().len() {
        return Err(RenameError::StructureChanged { old: old.to_string(), new: new.to_string() });
    }
    Ok(renamed)
}

/// A snippet with one identifier replaced by [`MASK_SENTINEL`] at all of
/// its occurrences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSnippet {
    masked: CodeSnippet,
    target: Option<String>,
}

impl MaskedSnippet {
    /// Wraps source that already carries sentinels, e.g. a request received
    /// from another process. The original name is unknown.
    pub fn from_masked_source(source: impl Into<String>, language: Language) -> Result<Self, SyntaxError> {
        Ok(MaskedSnippet { masked: CodeSnippet::parse(source, language)?, target: None })
    }

    pub fn masked(&self) -> &CodeSnippet {
        &self.masked
    }

    pub fn source(&self) -> &str {
        self.masked.source()
    }

    pub fn target(&self) -> Option<&str> {
        self.target.as_deref()
    }

    /// Token indices occupied by the sentinel.
    pub fn sentinel_positions(&self) -> Vec<usize> {
        self.masked.tokens().iter().enumerate().filter(|(_, t)| t.lexeme == MASK_SENTINEL).map(|(i, _)| i).collect()
    }

    /// Puts the original identifier back. `None` when the target is unknown.
    pub fn restore(&self) -> Option<Result<CodeSnippet, RenameError>> {
        let target = self.target.as_deref()?;
        Some(
            substitute(&self.masked, MASK_SENTINEL, target)
                .and_then(|s| Ok(CodeSnippet::parse(s, self.masked.language())?)),
        )
    }
}

pub fn mask_identifier(snippet: &CodeSnippet, target: &str) -> Result<MaskedSnippet, RenameError> {
    if !snippet.identifiers().contains(target) {
        return Err(RenameError::NotFound(target.to_string()));
    }
    if snippet.identifiers().occupies(MASK_SENTINEL) {
        return Err(RenameError::SentinelPresent);
    }
    let source = substitute(snippet, target, MASK_SENTINEL)?;
    let masked = CodeSnippet::parse(source, snippet.language())?;
    Ok(MaskedSnippet { masked, target: Some(target.to_string()) })
}

/// Candidate identifiers: sorted, legal, non-reserved lexemes gathered
/// from a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Vocabulary {
    names: BTreeSet<String>,
    provenance: String,
}

impl Vocabulary {
    /// Keeps only names that are legal in `language`.
    pub fn new<I, S>(names: I, language: Language, provenance: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names = names.into_iter().map(Into::into).filter(|n| is_legal_identifier(n, language)).collect();
        Vocabulary { names, provenance: provenance.into() }
    }

    pub fn from_snippets<'a>(
        snippets: impl IntoIterator<Item = &'a CodeSnippet>,
        provenance: impl Into<String>,
    ) -> Self {
        let mut names = BTreeSet::new();
        for snippet in snippets {
            names.extend(
                snippet
                    .identifiers()
                    .names()
                    .filter(|n| is_legal_identifier(n, snippet.language()))
                    .map(str::to_string),
            );
        }
        Vocabulary { names, provenance: provenance.into() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

/// `V − S(x)`: vocabulary names that can replace an identifier of the
/// snippet without colliding with anything already in it.
pub fn candidate_pool<'v>(vocab: &'v Vocabulary, present: &super::snippet::IdentifierSet) -> BTreeSet<&'v str> {
    vocab.iter().filter(|n| !present.occupies(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn py(src: &str) -> CodeSnippet {
        CodeSnippet::python(src).unwrap()
    }

    #[test]
    fn renames_every_occurrence() {
        let s = py("def f(a): return a+a");
        let r = rename_identifier(&s, "a", "b").unwrap();
        assert_eq!(r.source(), "def f(b): return b+b");
        assert_eq!(r.digest(), s.digest());
    }

    #[test]
    fn collision_is_rejected() {
        let s = py("def f(a): return a");
        assert_eq!(rename_identifier(&s, "a", "f"), Err(RenameError::Collision("f".into())));
    }

    #[test]
    fn free_names_also_collide() {
        let s = py("def f(a): return len(a)");
        assert_eq!(rename_identifier(&s, "a", "len"), Err(RenameError::Collision("len".into())));
    }

    #[test]
    fn illegal_and_reserved_lexemes_are_rejected() {
        let s = py("x = 1");
        for bad in ["1x", "for", "print", "match", "a-b", "", MASK_SENTINEL, "naïve"] {
            assert!(matches!(rename_identifier(&s, "x", bad), Err(RenameError::IllegalLexeme(_))), "{bad}");
        }
    }

    #[test]
    fn unknown_identifier_is_not_found() {
        let s = py("x = 1");
        assert_eq!(rename_identifier(&s, "y", "z"), Err(RenameError::NotFound("y".into())));
    }

    #[test]
    fn mask_all_occurrences() {
        let s = py("x = x + 1");
        let m = mask_identifier(&s, "x").unwrap();
        assert_eq!(m.source(), "__MASK__ = __MASK__ + 1");
        assert_eq!(m.sentinel_positions(), vec![0, 2]);
        assert_eq!(m.restore().unwrap().unwrap(), s);
    }

    #[test]
    fn mask_single_occurrence() {
        let s = py("def f(a): return 1");
        let m = mask_identifier(&s, "a").unwrap();
        assert_eq!(m.sentinel_positions().len(), 1);
    }

    #[test]
    fn mask_missing_name() {
        let s = py("x = 1");
        assert_eq!(mask_identifier(&s, "y").unwrap_err(), RenameError::NotFound("y".into()));
    }

    #[test]
    fn pool_is_set_difference() {
        let vocab = Vocabulary::new(["a", "b", "c", "d"], Language::Python, "test");
        let s = py("a = 1\nb = a\n");
        let pool: Vec<_> = candidate_pool(&vocab, s.identifiers()).into_iter().collect();
        assert_eq!(pool, vec!["c", "d"]);

        let empty = py("1 + 2");
        assert_eq!(candidate_pool(&vocab, empty.identifiers()).len(), 4);

        let small = Vocabulary::new(["a"], Language::Python, "test");
        assert!(candidate_pool(&small, s.identifiers()).is_empty());
    }

    #[test]
    fn vocabulary_filters_illegal_names() {
        let v = Vocabulary::new(["ok", "for", "9lives", "ok"], Language::Python, "t");
        assert_eq!(v.iter().collect::<Vec<_>>(), vec!["ok"]);
    }
}
