use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use super::grammar::Language;

/// Lexical category of a token as assigned by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Operator,
    Literal,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub lexeme: String,
    pub span: Range<usize>,
    pub kind: TokenKind,
}

/// Ordered, non-overlapping tokens of a snippet. Comments and whitespace
/// live in the gaps between spans.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    tokens: Vec<Token>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Token> {
        self.tokens.get(index)
    }

    pub fn as_slice(&self) -> &[Token] {
        &self.tokens
    }

    /// Rebuilds the source by interleaving token text with the gap text of
    /// `source`. Equals `source` for the stream the snippet was tokenized into.
    pub fn reconstruct(&self, source: &str) -> String {
        let mut out = String::with_capacity(source.len());
        let mut cursor = 0;
        for token in &self.tokens {
            out.push_str(&source[cursor..token.span.start]);
            out.push_str(&token.lexeme);
            cursor = token.span.end;
        }
        out.push_str(&source[cursor..]);
        out
    }
}

impl std::ops::Index<usize> for TokenStream {
    type Output = Token;

    fn index(&self, index: usize) -> &Token {
        &self.tokens[index]
    }
}

impl<'a> IntoIterator for &'a TokenStream {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.iter()
    }
}

/// One renamable identifier and every token position it occupies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierEntry {
    pub name: String,
    pub occurrences: Vec<usize>,
}

impl IdentifierEntry {
    pub fn first_occurrence(&self) -> usize {
        self.occurrences[0]
    }
}

/// The renamable identifiers of a snippet, ordered by first occurrence.
///
/// Also remembers every other identifier lexeme in the snippet (free names
/// such as builtins, imports and attribute members). Those can never be
/// renamed and can never be introduced by a rename either.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdentifierSet {
    entries: Vec<IdentifierEntry>,
    fixed: BTreeSet<String>,
}

impl IdentifierSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IdentifierEntry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&IdentifierEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Identifier lexemes present in the snippet that are not renamable.
    pub fn fixed_names(&self) -> &BTreeSet<String> {
        &self.fixed
    }

    /// True when `name` already appears anywhere in the snippet as an
    /// identifier, renamable or not.
    pub fn occupies(&self, name: &str) -> bool {
        self.contains(name) || self.fixed.contains(name)
    }
}

/// Hash of the syntax tree with identifier text erased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuralDigest(pub u64);

impl fmt::Display for StructuralDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at byte {offset} (line {line}, column {column})")]
pub struct SyntaxError {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

/// Source text that parses under its grammar, together with its token
/// stream, identifier set and structural digest.
///
/// Cheap to clone; the analysed parts are shared.
#[derive(Clone)]
pub struct CodeSnippet {
    inner: Arc<Analysed>,
}

struct Analysed {
    source: String,
    language: Language,
    digest: StructuralDigest,
    tokens: TokenStream,
    identifiers: IdentifierSet,
}

impl fmt::Debug for CodeSnippet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CodeSnippet")
            .field("language", &self.inner.language)
            .field("source", &self.inner.source)
            .finish()
    }
}

impl PartialEq for CodeSnippet {
    fn eq(&self, other: &Self) -> bool {
        self.inner.language == other.inner.language && self.inner.source == other.inner.source
    }
}

impl Eq for CodeSnippet {}

impl CodeSnippet {
    pub fn parse(source: impl Into<String>, language: Language) -> Result<Self, SyntaxError> {
        let source = source.into();
        let tree = language.parse(&source);
        let root = tree.root_node();
        if root.has_error() {
            let offset = first_error(root).map_or(0, |n| n.start_byte());
            let point = first_error(root).map_or(root.start_position(), |n| n.start_position());
            return Err(SyntaxError { offset, line: point.row + 1, column: point.column + 1 });
        }

        let mut tokens = Vec::new();
        collect_tokens(root, &source, &mut tokens);
        let digest = structural_digest(root, &source);
        let identifiers = analyse_bindings(root, &source, &tokens);

        Ok(CodeSnippet {
            inner: Arc::new(Analysed { source, language, digest, tokens: TokenStream { tokens }, identifiers }),
        })
    }

    pub fn python(source: impl Into<String>) -> Result<Self, SyntaxError> {
        Self::parse(source, Language::Python)
    }

    pub fn source(&self) -> &str {
        &self.inner.source
    }

    pub fn language(&self) -> Language {
        self.inner.language
    }

    pub fn digest(&self) -> StructuralDigest {
        self.inner.digest
    }

    pub fn tokens(&self) -> &TokenStream {
        &self.inner.tokens
    }

    pub fn identifiers(&self) -> &IdentifierSet {
        &self.inner.identifiers
    }
}

fn first_error(node: Node<'_>) -> Option<Node<'_>> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    if !node.has_error() {
        return None;
    }
    let mut cursor = node.walk();
    let found = node.children(&mut cursor).find_map(first_error);
    found
}

fn is_atomic(node: Node<'_>) -> bool {
    match node.kind() {
        "string_content" => true,
        "string" => {
            let mut cursor = node.walk();
            let plain = !node.children(&mut cursor).any(|c| c.kind() == "interpolation");
            plain
        }
        _ => node.child_count() == 0,
    }
}

fn classify(node: Node<'_>, text: &str) -> TokenKind {
    match node.kind() {
        "identifier" => TokenKind::Identifier,
        "integer" | "float" | "string" | "string_start" | "string_content" | "string_end" | "true" | "false"
        | "none" | "ellipsis" => TokenKind::Literal,
        _ if !node.is_named() => {
            if text.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
                TokenKind::Keyword
            } else {
                TokenKind::Operator
            }
        }
        _ => TokenKind::Other,
    }
}

fn collect_tokens(node: Node<'_>, source: &str, out: &mut Vec<Token>) {
    if node.kind() == "comment" {
        return;
    }
    if is_atomic(node) {
        let span = node.byte_range();
        if span.is_empty() {
            return;
        }
        let lexeme = &source[span.clone()];
        out.push(Token { lexeme: lexeme.to_string(), kind: classify(node, lexeme), span });
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect_tokens(child, source, out);
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_extend(FNV_OFFSET, bytes)
}

fn fnv1a_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn structural_digest(root: Node<'_>, source: &str) -> StructuralDigest {
    fn walk(node: Node<'_>, source: &str, hash: &mut u64) {
        *hash = fnv1a_extend(*hash, node.kind().as_bytes());
        *hash = fnv1a_extend(*hash, b"\x1f");
        if node.kind() == "comment" {
            return;
        }
        if is_atomic(node) {
            let text: &[u8] =
                if node.kind() == "identifier" { b"\x00ident" } else { source[node.byte_range()].as_bytes() };
            *hash = fnv1a_extend(*hash, text);
            *hash = fnv1a_extend(*hash, b"\x1e");
            return;
        }
        *hash = fnv1a_extend(*hash, b"(");
        let mut cursor = node.walk();
        for child in node.children(&mut cursor) {
            walk(child, source, hash);
        }
        *hash = fnv1a_extend(*hash, b")");
    }
    let mut hash = FNV_OFFSET;
    walk(root, source, &mut hash);
    StructuralDigest(hash)
}

/// Name-level facts gathered from one walk over the tree.
#[derive(Default)]
struct Bindings {
    bound: BTreeSet<String>,
    excluded: BTreeSet<String>,
}

impl Bindings {
    fn bind(&mut self, name: &str, in_class_body: bool) {
        if in_class_body {
            // class-level names are attributes, reachable through `obj.name`
            self.excluded.insert(name.to_string());
        } else {
            self.bound.insert(name.to_string());
        }
    }
}

fn text<'s>(node: Node<'_>, source: &'s str) -> &'s str {
    &source[node.byte_range()]
}

fn bind_target(node: Node<'_>, source: &str, in_class: bool, b: &mut Bindings) {
    match node.kind() {
        "identifier" => b.bind(text(node, source), in_class),
        "pattern_list"
        | "tuple_pattern"
        | "list_pattern"
        | "tuple"
        | "list"
        | "parenthesized_expression"
        | "list_splat_pattern"
        | "dictionary_splat_pattern"
        | "list_splat"
        | "as_pattern_target" => {
            let mut cursor = node.walk();
            for child in node.named_children(&mut cursor) {
                bind_target(child, source, in_class, b);
            }
        }
        // attribute and subscript targets bind nothing new
        _ => {}
    }
}

fn bind_parameters(node: Node<'_>, source: &str, b: &mut Bindings) {
    let mut cursor = node.walk();
    for param in node.named_children(&mut cursor) {
        match param.kind() {
            "identifier" => b.bind(text(param, source), false),
            "default_parameter" | "typed_default_parameter" => {
                if let Some(name) = param.child_by_field_name("name") {
                    bind_target(name, source, false, b);
                }
            }
            "typed_parameter" => {
                if let Some(first) = param.named_child(0) {
                    bind_target(first, source, false, b);
                }
            }
            "list_splat_pattern" | "dictionary_splat_pattern" | "tuple_pattern" => bind_target(param, source, false, b),
            _ => {}
        }
    }
}

fn scan_bindings(node: Node<'_>, source: &str, in_class: bool, b: &mut Bindings) {
    let field = |name: &str| node.child_by_field_name(name);
    let mut child_in_class = in_class;
    match node.kind() {
        "import_statement" | "import_from_statement" | "future_import_statement" => {
            let mut stack = vec![node];
            while let Some(n) = stack.pop() {
                if n.kind() == "identifier" {
                    b.excluded.insert(text(n, source).to_string());
                }
                let mut cursor = n.walk();
                stack.extend(n.children(&mut cursor));
            }
            return;
        }
        "attribute" => {
            if let Some(attr) = field("attribute") {
                b.excluded.insert(text(attr, source).to_string());
            }
        }
        "keyword_argument" => {
            if let Some(name) = field("name") {
                b.excluded.insert(text(name, source).to_string());
            }
        }
        "assignment" | "augmented_assignment" => {
            if let Some(left) = field("left") {
                bind_target(left, source, in_class, b);
            }
        }
        "for_statement" | "for_in_clause" => {
            if let Some(left) = field("left") {
                bind_target(left, source, in_class && node.kind() == "for_statement", b);
            }
        }
        "named_expression" => {
            if let Some(name) = field("name") {
                bind_target(name, source, false, b);
            }
        }
        "as_pattern" => {
            if let Some(alias) = field("alias") {
                bind_target(alias, source, in_class, b);
            }
        }
        "function_definition" => {
            if let Some(name) = field("name") {
                bind_target(name, source, in_class, b);
            }
            if let Some(params) = field("parameters") {
                bind_parameters(params, source, b);
            }
            child_in_class = false;
        }
        "lambda" => {
            if let Some(params) = field("parameters") {
                bind_parameters(params, source, b);
            }
            child_in_class = false;
        }
        "class_definition" => {
            if let Some(name) = field("name") {
                bind_target(name, source, in_class, b);
            }
            if let Some(body) = field("body") {
                let mut cursor = node.walk();
                for child in node.children(&mut cursor) {
                    let is_body = child.id() == body.id();
                    scan_bindings(child, source, is_body, b);
                }
                return;
            }
        }
        "global_statement" | "nonlocal_statement" => {
            let mut cursor = node.walk();
            for child in node.named_children(&mut cursor) {
                bind_target(child, source, false, b);
            }
        }
        _ => {}
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        scan_bindings(child, source, child_in_class, b);
    }
}

fn analyse_bindings(root: Node<'_>, source: &str, tokens: &[Token]) -> IdentifierSet {
    let mut bindings = Bindings::default();
    scan_bindings(root, source, false, &mut bindings);

    let mut order: Vec<String> = Vec::new();
    let mut occurrences: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut fixed = BTreeSet::new();
    for (index, token) in tokens.iter().enumerate() {
        if token.kind != TokenKind::Identifier {
            continue;
        }
        let name = &token.lexeme;
        if bindings.bound.contains(name) && !bindings.excluded.contains(name) {
            let slot = occurrences.entry(name.clone()).or_default();
            if slot.is_empty() {
                order.push(name.clone());
            }
            slot.push(index);
        } else {
            fixed.insert(name.clone());
        }
    }
    let entries = order
        .into_iter()
        .map(|name| {
            let occurrences = occurrences.remove(&name).unwrap_or_default();
            IdentifierEntry { name, occurrences }
        })
        .collect();
    IdentifierSet { entries, fixed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexemes(s: &CodeSnippet) -> Vec<(&str, TokenKind)> {
        s.tokens().iter().map(|t| (t.lexeme.as_str(), t.kind)).collect()
    }

    fn names(s: &CodeSnippet) -> Vec<&str> {
        s.identifiers().names().collect()
    }

    #[test]
    fn tokenizes_simple_assignment() {
        let s = CodeSnippet::python("x = 1").unwrap();
        assert_eq!(
            lexemes(&s),
            vec![("x", TokenKind::Identifier), ("=", TokenKind::Operator), ("1", TokenKind::Literal)]
        );
    }

    #[test]
    fn empty_source_has_no_tokens() {
        let s = CodeSnippet::python("").unwrap();
        assert!(s.tokens().is_empty());
        assert!(s.identifiers().is_empty());
    }

    #[test]
    fn unbalanced_bracket_is_a_syntax_error() {
        let err = CodeSnippet::python("x = foo(1, 2\ny = 3\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = CodeSnippet::python("def f(:\n    pass\n").unwrap_err();
        assert!(err.offset <= 6, "{err:?}");
    }

    #[test]
    fn comments_are_gaps() {
        let src = "a = 1  # note\nb = a  # other\n";
        let s = CodeSnippet::python(src).unwrap();
        assert!(s.tokens().iter().all(|t| !t.lexeme.starts_with('#')));
        assert_eq!(s.tokens().reconstruct(src), src);
    }

    #[test]
    fn keywords_and_literals() {
        let s = CodeSnippet::python("def f(a):\n    return a + 'x' if True else None\n").unwrap();
        let kinds: Vec<_> = lexemes(&s);
        assert!(kinds.contains(&("def", TokenKind::Keyword)));
        assert!(kinds.contains(&("return", TokenKind::Keyword)));
        assert!(kinds.contains(&("'x'", TokenKind::Literal)));
        assert!(kinds.contains(&("True", TokenKind::Literal)));
        assert!(kinds.contains(&("+", TokenKind::Operator)));
    }

    #[test]
    fn identifiers_of_simple_function() {
        let s = CodeSnippet::python("def f(a): return a + a").unwrap();
        assert_eq!(names(&s), vec!["f", "a"]);
        let ids = s.identifiers();
        assert_eq!(ids.get("f").unwrap().occurrences, vec![1]);
        assert_eq!(ids.get("a").unwrap().occurrences, vec![3, 7, 9]);
    }

    #[test]
    fn literals_only_has_no_identifiers() {
        let s = CodeSnippet::python("1 + 2").unwrap();
        assert!(s.identifiers().is_empty());
    }

    #[test]
    fn free_imported_and_attribute_names_are_fixed() {
        let src = "import os\nfrom math import sqrt as root\n\
                   def go(path, n):\n    total = root(n)\n    os.path.join(path, 'x')\n    print(len(path))\n    return total\n";
        let s = CodeSnippet::python(src).unwrap();
        // `path` is also an attribute member, so it stays fixed everywhere
        assert_eq!(names(&s), vec!["go", "n", "total"]);
        let fixed = s.identifiers().fixed_names();
        for name in ["os", "math", "sqrt", "root", "join", "print", "len", "path"] {
            assert!(fixed.contains(name), "{name} should be fixed");
        }
    }

    #[test]
    fn keyword_argument_names_and_class_members_are_excluded() {
        let src = "class Box:\n    size = 3\n    def grow(self, by):\n        self.size += by\n        return self\n\
                   def make(by):\n    return Box().grow(by=by)\n";
        let s = CodeSnippet::python(src).unwrap();
        assert_eq!(names(&s), vec!["Box", "self", "make"]);
    }

    #[test]
    fn comprehension_loop_with_and_except_bindings() {
        let src = "def f(xs):\n    ys = [v * 2 for v in xs]\n    for i, (a, b) in enumerate(ys):\n        pass\n\
                   \x20   with open(p) as fh:\n        pass\n    try:\n        pass\n    except ValueError as err:\n        raise err\n\
                   \x20   if (m := len(xs)) > 0:\n        return lambda k, *rest: k + m\n";
        let s = CodeSnippet::python(src).unwrap();
        let got = names(&s);
        for name in ["f", "xs", "ys", "v", "i", "a", "b", "fh", "err", "m", "k", "rest"] {
            assert!(got.contains(&name), "missing {name} in {got:?}");
        }
        assert!(!got.contains(&"p"));
        assert!(!got.contains(&"enumerate"));
    }

    #[test]
    fn digest_ignores_identifier_text_only() {
        let a = CodeSnippet::python("def f(a): return a + 1").unwrap();
        let b = CodeSnippet::python("def g(zz): return zz + 1").unwrap();
        let c = CodeSnippet::python("def f(a): return a + 2").unwrap();
        let d = CodeSnippet::python("def f(a): return a - 1").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_ne!(a.digest(), d.digest());
    }

    #[test]
    fn fstring_interpolations_are_tokenized() {
        let s = CodeSnippet::python("name = 'x'\nmsg = f'hi {name}!'\n").unwrap();
        assert_eq!(s.identifiers().get("name").unwrap().occurrences.len(), 2);
    }
}
