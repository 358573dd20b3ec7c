//! Pre-tokenization of mixed text and inline LaTeX math.
//!
//! Text outside `$...$` is split on whitespace and kept verbatim. Inside a
//! math region every command, symbol, digit and letter becomes one
//! [`MathToken`] rendered as `<name>`, where the name is looked up in a
//! [`SynonymTable`] so that aliases such as `\frac` and `\dfrac` collapse to
//! one token. Grouping braces become `<{>` and `<}>`.
//!
//! ```
//! use mathfuse::tokenizer::{pretokenize, SynonymTable};
//!
//! let table = SynonymTable::builtin();
//! let tokens = pretokenize(r"norm $\|A\|_2$", &table);
//! assert_eq!(tokens.to_string(), "norm <Vert> <A> <Vert> <subscript> <2>");
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

const BUILTIN_TABLE: &str = include_str!("../data/synonyms.txt");

/// Canonical name whose aliases are removed from the token stream.
pub const DROP: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word,
    MathSymbol,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MathToken {
    pub kind: TokenKind,
    pub surface: String,
}

impl MathToken {
    pub fn word(text: impl Into<String>) -> Self {
        Self {
            kind: TokenKind::Word,
            surface: text.into(),
        }
    }

    /// A math symbol with the given canonical name, rendered as `<name>`.
    pub fn symbol(canonical: &str) -> Self {
        Self {
            kind: TokenKind::MathSymbol,
            surface: format!("<{canonical}>"),
        }
    }

    pub fn is_math(&self) -> bool {
        self.kind == TokenKind::MathSymbol
    }
}

/// Tokens in source reading order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(pub Vec<MathToken>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MathToken> {
        self.0.iter()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|t| t.surface.as_str())
    }

    pub fn math_symbols(&self) -> impl Iterator<Item = &MathToken> {
        self.0.iter().filter(|t| t.is_math())
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, tok) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(&tok.surface)?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a MathToken;
    type IntoIter = std::slice::Iter<'a, MathToken>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Maps raw LaTeX lexemes to canonical token names.
///
/// The text form has one line per canonical name:
///
/// ```text
/// frac: \frac \dfrac
/// subscript: _
/// ```
///
/// Blank lines and lines starting with `#` are ignored. An alias may belong to
/// one canonical name only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    by_alias: HashMap<String, String>,
    by_canonical: BTreeMap<String, BTreeSet<String>>,
}

impl SynonymTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The table shipped with the crate (`data/synonyms.txt`).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TABLE).expect("builtin synonym table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::empty();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((canonical, aliases)) = line.split_once(':') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "expected \"canonical: alias ...\"".into(),
                });
            };
            table
                .add(canonical.trim(), aliases.split_whitespace())
                .map_err(|message| Error::Parse { line: idx + 1, message })?;
        }
        Ok(table)
    }

    fn add<'a>(&mut self, canonical: &str, aliases: impl Iterator<Item = &'a str>) -> Result<(), String> {
        if canonical.is_empty() || canonical.contains(char::is_whitespace) || canonical.contains(['<', '>']) {
            return Err(format!("invalid canonical name {canonical:?}"));
        }
        for alias in aliases {
            match self.by_alias.get(alias) {
                Some(existing) if existing != canonical => {
                    return Err(format!("alias {alias} already maps to {existing}, not {canonical}"));
                }
                _ => {}
            }
            self.by_alias.insert(alias.to_string(), canonical.to_string());
            self.by_canonical
                .entry(canonical.to_string())
                .or_default()
                .insert(alias.to_string());
        }
        Ok(())
    }

    /// Adds aliases for a canonical name, enforcing disjointness.
    pub fn insert<'a>(&mut self, canonical: &str, aliases: impl IntoIterator<Item = &'a str>) -> Result<()> {
        self.add(canonical, aliases.into_iter())
            .map_err(Error::InvalidParameter)
    }

    pub fn canonical(&self, lexeme: &str) -> Option<&str> {
        self.by_alias.get(lexeme).map(String::as_str)
    }

    pub fn aliases(&self, canonical: &str) -> Option<&BTreeSet<String>> {
        self.by_canonical.get(canonical)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.by_canonical.iter().map(|(c, a)| (c.as_str(), a))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenizerOptions {
    /// Also recognize `$$...$$` and `\[...\]` display math.
    pub display_math: bool,
}

/// Tokenizes with the default options: inline `$...$` only.
pub fn pretokenize(text: &str, table: &SynonymTable) -> TokenSequence {
    pretokenize_with(text, table, TokenizerOptions::default())
}

pub fn pretokenize_with(text: &str, table: &SynonymTable, opts: TokenizerOptions) -> TokenSequence {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut words = String::new();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        if c == '\\' && i + 1 < chars.len() {
            let next = chars[i + 1];
            if opts.display_math && next == '[' {
                if let Some(end) = find_seq(&chars, i + 2, &['\\', ']']) {
                    flush_words(&mut words, &mut out);
                    lex_math(&chars[i + 2..end], table, &mut out);
                    i = end + 2;
                    continue;
                }
            }
            // escaped character (e.g. \$) stays in the text
            words.push(c);
            words.push(next);
            i += 2;
            continue;
        }
        if c == '$' {
            if opts.display_math && chars.get(i + 1) == Some(&'$') {
                if let Some(end) = find_seq(&chars, i + 2, &['$', '$']) {
                    flush_words(&mut words, &mut out);
                    lex_math(&chars[i + 2..end], table, &mut out);
                    i = end + 2;
                    continue;
                }
            }
            if let Some(end) = find_seq(&chars, i + 1, &['$']) {
                flush_words(&mut words, &mut out);
                lex_math(&chars[i + 1..end], table, &mut out);
                i = end + 1;
                continue;
            }
        }
        words.push(c);
        i += 1;
    }
    flush_words(&mut words, &mut out);
    TokenSequence(out)
}

/// Position of the next unescaped occurrence of `pat` at or after `from`.
fn find_seq(chars: &[char], from: usize, pat: &[char]) -> Option<usize> {
    let mut i = from;
    while i + pat.len() <= chars.len() {
        if chars[i..i + pat.len()] == *pat {
            return Some(i);
        }
        if chars[i] == '\\' && pat[0] != '\\' {
            i += 2;
        } else {
            i += 1;
        }
    }
    None
}

fn flush_words(buf: &mut String, out: &mut Vec<MathToken>) {
    out.extend(buf.split_whitespace().map(MathToken::word));
    buf.clear();
}

fn lex_math(chars: &[char], table: &SynonymTable, out: &mut Vec<MathToken>) {
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '{' => {
                out.push(MathToken::symbol("{"));
                i += 1;
            }
            '}' => {
                out.push(MathToken::symbol("}"));
                i += 1;
            }
            '\\' => {
                let start = i;
                i += 1;
                if i < chars.len() && chars[i].is_ascii_alphabetic() {
                    while i < chars.len() && chars[i].is_ascii_alphabetic() {
                        i += 1;
                    }
                } else if i < chars.len() && chars[i].is_whitespace() {
                    // control space
                    i += 1;
                    continue;
                } else if i < chars.len() {
                    i += 1;
                }
                let lexeme: String = chars[start..i].iter().collect();
                emit(&lexeme, table, out);
            }
            _ => {
                let mut buf = [0u8; 4];
                emit(c.encode_utf8(&mut buf), table, out);
                i += 1;
            }
        }
    }
}

fn emit(lexeme: &str, table: &SynonymTable, out: &mut Vec<MathToken>) {
    match table.canonical(lexeme) {
        Some(DROP) => {}
        Some(canonical) => out.push(MathToken::symbol(canonical)),
        None => {
            let name = match lexeme.strip_prefix('\\') {
                Some("") => "\\",
                Some(rest) => rest,
                None => lexeme,
            };
            out.push(MathToken::symbol(name));
        }
    }
}

/// The set of math symbol surfaces observed in a corpus.
pub fn vocabulary_of<'a, I>(corpus: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a TokenSequence>,
{
    corpus
        .into_iter()
        .flat_map(|seq| seq.math_symbols().map(|t| t.surface.clone()))
        .collect()
}
