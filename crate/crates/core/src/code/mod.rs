//! Syntax-aware code manipulation.
//!
//! Snippets are parsed once on construction; tokens, renamable identifiers
//! and the structural digest are computed then and shared. Every
//! transformation produces a fresh snippet by byte substitution followed by
//! a reparse, so an accepted rename is always grammatical and keeps the
//! identifier-erased tree intact.

mod grammar;
mod rename;
mod snippet;

pub use grammar::{Language, UnknownLanguage};
pub use rename::{
    candidate_pool, is_legal_identifier, mask_identifier, rename_identifier, MaskedSnippet, RenameError, Vocabulary,
    MASK_SENTINEL,
};
pub use snippet::{
    CodeSnippet, IdentifierEntry, IdentifierSet, StructuralDigest, SyntaxError, Token, TokenKind, TokenStream,
};

pub(crate) use snippet::fnv1a;

pub fn tokenize(snippet: &CodeSnippet) -> &TokenStream {
    snippet.tokens()
}

pub fn extract_identifiers(snippet: &CodeSnippet) -> &IdentifierSet {
    snippet.identifiers()
}


#[cfg(test)]
mod tests {
    use super::fixtures::NOISY_BUBBLE_SORT;
    use super::*;

    #[test]
    fn motivating_snippet_has_six_identifiers() {
        let s = CodeSnippet::python(NOISY_BUBBLE_SORT).unwrap();
        let ids = extract_identifiers(&s);
        assert_eq!(ids.len(), 6);
        assert_eq!(ids.get("a1_selection").unwrap().occurrences.len(), 3);
    }

    #[test]
    fn motivating_rename_to_count() {
        let s = CodeSnippet::python(NOISY_BUBBLE_SORT).unwrap();
        let r = rename_identifier(&s, "a1_selection", "count").unwrap();
        assert_eq!(r.source(), NOISY_BUBBLE_SORT.replace("a1_selection", "count"));
        assert_eq!(r.digest(), s.digest());
    }

    #[test]
    fn tokenize_reconstructs_source() {
        let s = CodeSnippet::python(NOISY_BUBBLE_SORT).unwrap();
        assert_eq!(tokenize(&s).reconstruct(s.source()), NOISY_BUBBLE_SORT);
    }
}
