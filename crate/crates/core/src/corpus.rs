//! Bug-fix dataset ingestion, language-neutral code tokenization, and the
//! immutable example store that retrieval indexes.
//!
//! The on-disk format is newline-delimited JSON records with fields
//! `id`, `buggy`, `fixed`, and optional `location` and `message`.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (buggy, fixed) pair. Doubles as a few-shot example and as the gold
/// answer for a repair task.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CodeExample {
    pub id: String,
    pub buggy_code: String,
    pub fixed_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Train,
    Test,
    Custom,
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitLabel::Train => write!(f, "train"),
            SplitLabel::Test => write!(f, "test"),
            SplitLabel::Custom => write!(f, "custom"),
        }
    }
}

/// An ordered, immutable collection of examples. Iteration order is file
/// order and stable across loads.
#[derive(Debug, Clone)]
pub struct Corpus {
    examples: Vec<CodeExample>,
    split_label: SplitLabel,
}

impl Corpus {
    pub fn new(examples: Vec<CodeExample>, split_label: SplitLabel) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, ex) in examples.iter().enumerate() {
            if ex.buggy_code.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("record `{}` has empty buggy code", ex.id),
                });
            }
            if ex.fixed_code.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("record `{}` has empty fixed code", ex.id),
                });
            }
            if !seen.insert(ex.id.clone()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate id `{}`", ex.id),
                });
            }
        }
        Ok(Corpus {
            examples,
            split_label,
        })
    }

    pub fn examples(&self) -> &[CodeExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split_label(&self) -> SplitLabel {
        self.split_label
    }

    pub fn get(&self, id: &str) -> Option<&CodeExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Content hash over every example field, in order. Used to key index
    /// snapshots to the corpus they were built from.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for ex in &self.examples {
            hasher.update(ex.id.as_bytes());
            hasher.update([0]);
            hasher.update(ex.buggy_code.as_bytes());
            hasher.update([0]);
            hasher.update(ex.fixed_code.as_bytes());
            hasher.update([0]);
            if let Some(loc) = &ex.fault_location {
                hasher.update(loc.as_bytes());
            }
            hasher.update([0]);
            if let Some(msg) = &ex.commit_message {
                hasher.update(msg.as_bytes());
            }
            hasher.update([1]);
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<String>,
    buggy: Option<String>,
    fixed: Option<String>,
    #[serde(default)]
    location: Option<String>,
    #[serde(default)]
    message: Option<String>,
}

/// Load a newline-delimited dataset. Records appear in the corpus in file
/// order; a record missing a required field reports its line number.
pub fn load_corpus(path: &Path, split_label: SplitLabel) -> Result<Corpus> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = raw
            .id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("rec{line_no}"));
        let buggy = raw.buggy.unwrap_or_default();
        let fixed = raw.fixed.unwrap_or_default();
        if buggy.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "missing or empty `buggy` field".into(),
            });
        }
        if fixed.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "missing or empty `fixed` field".into(),
            });
        }
        examples.push(CodeExample {
            id,
            buggy_code: buggy,
            fixed_code: fixed,
            fault_location: raw.location,
            commit_message: raw.message,
        });
    }
    Corpus::new(examples, split_label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    String,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
}

/// Token sequence with whitespace and comments dropped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
}

impl TokenStream {
    pub fn lexemes(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.lexeme.as_str())
    }

    /// Lowercased lexemes; the term view BM25 indexes.
    pub fn terms(&self) -> Vec<String> {
        self.tokens
            .iter()
            .map(|t| t.lexeme.to_lowercase())
            .collect()
    }

    pub fn joined(&self) -> String {
        self.lexemes().collect::<Vec<_>>().join(" ")
    }
}

const KEYWORDS: &[&str] = &[
    "if",
    "else",
    "for",
    "while",
    "do",
    "return",
    "break",
    "continue",
    "switch",
    "case",
    "default",
    "int",
    "long",
    "short",
    "byte",
    "char",
    "float",
    "double",
    "boolean",
    "void",
    "new",
    "null",
    "true",
    "false",
    "class",
    "interface",
    "enum",
    "public",
    "private",
    "protected",
    "static",
    "final",
    "try",
    "catch",
    "finally",
    "throw",
    "throws",
    "this",
    "super",
    "import",
    "package",
];

/// Language-neutral lexer: identifiers, digit-led numbers, quoted strings
/// with backslash escapes, `//` and `/* */` comments stripped, everything
/// else a single-character operator or punctuation token. Unknown
/// characters never fail; they become single-char operator tokens.
pub fn tokenize(code: &str) -> TokenStream {
    let chars: Vec<char> = code.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        // line comment
        if c == '/' && i + 1 < chars.len() && chars[i + 1] == '/' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        // block comment (unterminated runs to end of input)
        if c == '/' && i + 1 < chars.len() && chars[i + 1] == '*' {
            i += 2;
            while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                i += 1;
            }
            i = (i + 2).min(chars.len());
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let lexeme: String = chars[start..i].iter().collect();
            let kind = if KEYWORDS.contains(&lexeme.as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            tokens.push(Token { kind, lexeme });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || chars[i] == '_')
            {
                // maximal digit-led run; covers 0x1f, 1_000, 3.14f
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Number,
                lexeme: chars[start..i].iter().collect(),
            });
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != quote {
                if chars[i] == '\\' && i + 1 < chars.len() {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(chars.len());
            tokens.push(Token {
                kind: TokenKind::String,
                lexeme: chars[start..i].iter().collect(),
            });
            continue;
        }
        let kind = match c {
            '(' | ')' | '{' | '}' | '[' | ']' | ';' | ',' => TokenKind::Punctuation,
            _ => TokenKind::Operator,
        };
        tokens.push(Token {
            kind,
            lexeme: c.to_string(),
        });
        i += 1;
    }
    TokenStream { tokens }
}

/// Canonical form: tokenize, then re-join lexemes with single spaces.
/// Idempotent; this is the equality basis for patch matching.
pub fn normalize(code: &str) -> String {
    tokenize(code).joined()
}
