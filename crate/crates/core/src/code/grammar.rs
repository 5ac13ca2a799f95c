//! Grammar registry.
//!
//! Each supported language maps to a tree-sitter grammar plus the small
//! amount of lexical knowledge the kernel needs: which lexemes are reserved
//! and which node kinds bind names.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tree_sitter::{Parser, Tree};

/// Languages with a compiled-in grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Python,
}

impl Language {
    pub const ALL: &'static [Language] = &[Language::Python];

    pub fn name(self) -> &'static str {
        match self {
            Language::Python => "python",
        }
    }

    /// Lexemes that may never be introduced as a new identifier.
    ///
    /// Includes hard keywords plus names the grammar treats specially in
    /// some positions (soft keywords, legacy `print`/`exec` statements).
    pub fn reserved(self) -> &'static [&'static str] {
        match self {
            Language::Python => PYTHON_RESERVED,
        }
    }

    pub fn is_reserved(self, lexeme: &str) -> bool {
        self.reserved().contains(&lexeme)
    }

    pub(crate) fn parse(self, source: &str) -> Tree {
        thread_local! {
            static PYTHON: std::cell::RefCell<Parser> = std::cell::RefCell::new({
                let mut parser = Parser::new();
                parser
                    .set_language(&tree_sitter_python::LANGUAGE.into())
                    .expect("python grammar is ABI compatible");
                parser
            });
        }
        match self {
            Language::Python => PYTHON.with(|p| {
                let mut parser = p.borrow_mut();
                parser.reset();
                parser.parse(source, None).expect("parser has a language and no timeout")
            }),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownLanguage(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language `{0}`")]
pub struct UnknownLanguage(pub String);

const PYTHON_RESERVED: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield", // soft and legacy keywords
    "match", "case", "type", "_", "print", "exec",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup() {
        assert_eq!("python".parse::<Language>().unwrap(), Language::Python);
        assert_eq!("Python".parse::<Language>().unwrap(), Language::Python);
        assert!("cobol".parse::<Language>().is_err());
    }

    #[test]
    fn reserved_words() {
        assert!(Language::Python.is_reserved("def"));
        assert!(Language::Python.is_reserved("print"));
        assert!(!Language::Python.is_reserved("count"));
    }
}
