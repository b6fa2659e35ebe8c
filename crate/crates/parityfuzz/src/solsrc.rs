//! Lightweight Solidity source scanning: entry-point inference, return-type
//! signatures, and a token-kind coverage proxy.
//!
//! None of this is a real parser; regex-level scanning is enough to drive
//! harness setup for the small single-file programs the fuzzer works on.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::types::{CoverageSnapshot, EntryPoint};

/// An executable entry point plus the textual Solidity return types of its
/// signature, e.g. `["uint256", "bool"]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntrySignature {
    pub entry: EntryPoint,
    pub returns: Vec<String>,
}

/// Picks the first public or external zero-argument function declared inside
/// a contract, in source order. Returns `None` when no such function exists.
pub fn infer_entry(source: &str) -> Option<EntrySignature> {
    static CONTRACT: OnceLock<Regex> = OnceLock::new();
    static FUNCTION: OnceLock<Regex> = OnceLock::new();
    let contract_re = CONTRACT
        .get_or_init(|| Regex::new(r"(?:^|\b)contract\s+([A-Za-z_$][\w$]*)").unwrap());
    let function_re = FUNCTION
        .get_or_init(|| Regex::new(r"function\s+([A-Za-z_$][\w$]*)\s*\(\s*\)\s*([^{;]*)").unwrap());

    let stripped = strip_comments(source);
    let contracts: Vec<(usize, String)> = contract_re
        .captures_iter(&stripped)
        .map(|c| (c.get(0).unwrap().start(), c[1].to_string()))
        .collect();

    for caps in function_re.captures_iter(&stripped) {
        let start = caps.get(0).unwrap().start();
        let modifiers = &caps[2];
        if !has_word(modifiers, "public") && !has_word(modifiers, "external") {
            continue;
        }
        // The function must live inside a contract body; the nearest
        // preceding declaration owns it.
        let Some((_, contract)) = contracts.iter().rev().find(|(pos, _)| *pos < start) else {
            continue;
        };
        return Some(EntrySignature {
            entry: EntryPoint { contract: contract.clone(), function: caps[1].to_string() },
            returns: parse_returns(modifiers),
        });
    }
    None
}

fn has_word(haystack: &str, word: &str) -> bool {
    haystack
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .any(|tok| tok == word)
}

fn parse_returns(modifiers: &str) -> Vec<String> {
    static RETURNS: OnceLock<Regex> = OnceLock::new();
    let re = RETURNS.get_or_init(|| Regex::new(r"returns\s*\(([^)]*)\)").unwrap());
    let Some(caps) = re.captures(modifiers) else {
        return Vec::new();
    };
    caps[1]
        .split(',')
        .filter_map(|param| param.split_whitespace().next().map(str::to_string))
        .collect()
}

/// Removes `//` and `/* */` comments, preserving everything else verbatim.
pub fn strip_comments(source: &str) -> String {
    let mut out = String::with_capacity(source.len());
    let bytes = source.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'/' && i + 1 < bytes.len() && bytes[i + 1] == b'/' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if bytes[i] == b'/' && i + 1 < bytes.len() && bytes[i + 1] == b'*' {
            i += 2;
            while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                i += 1;
            }
            i = (i + 2).min(bytes.len());
            out.push(' ');
        } else {
            // Don't scan for comment markers inside string literals.
            if bytes[i] == b'"' || bytes[i] == b'\'' {
                let quote = bytes[i];
                out.push(bytes[i] as char);
                i += 1;
                while i < bytes.len() && bytes[i] != quote {
                    out.push(bytes[i] as char);
                    i += 1;
                }
            }
            if i < bytes.len() {
                out.push(bytes[i] as char);
                i += 1;
            }
        }
    }
    out
}

const KEYWORDS: [&str; 72] = [
    "abstract", "address", "anonymous", "assembly", "assert", "bool", "break", "bytes",
    "calldata", "catch", "constant", "constructor", "continue", "contract", "delegatecall",
    "delete", "do", "else", "emit", "enum", "error", "event", "external", "fallback", "false",
    "fixed", "for", "function", "if", "immutable", "import", "indexed", "interface", "internal",
    "is", "library", "mapping", "memory", "modifier", "new", "override", "payable", "pragma",
    "private", "public", "pure", "push", "receive", "require", "return", "returns", "revert",
    "solidity", "storage", "string", "struct", "this", "true", "try", "type", "ufixed", "uint",
    "unchecked", "unicode", "using", "view", "virtual", "while", "int", "byte", "let", "pop",
];

const PUNCT: [&str; 31] = [
    "{", "}", "(", ")", "[", "]", ";", ",", ".", "=", "+", "-", "*", "/", "%", "<", ">", "!",
    "&", "|", "^", "~", "?", ":", "==", "!=", "<=", ">=", "=>", "->", ":=",
];

const CATEGORIES: [&str; 3] = ["ident", "number", "string"];

/// Size of the fixed token-kind vocabulary the proxy measures against.
pub const TOKEN_VOCABULARY: u64 = (KEYWORDS.len() + PUNCT.len() + CATEGORIES.len()) as u64;

/// Approximates feature coverage as the fraction of the fixed token-kind
/// vocabulary a program exercises. Sized types collapse to their base
/// keyword (`uint256` counts as `uint`).
pub fn token_coverage(source: &str) -> CoverageSnapshot {
    let kinds = token_kinds(source);
    CoverageSnapshot::new(kinds.len() as u64, TOKEN_VOCABULARY)
        .expect("kind count is bounded by the vocabulary")
}

fn token_kinds(source: &str) -> BTreeSet<&'static str> {
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    let token_re = TOKEN.get_or_init(|| {
        Regex::new(r#"[A-Za-z_$][\w$]*|0x[0-9a-fA-F]+|\d+|"[^"\n]*"|==|!=|<=|>=|=>|->|:=|\S"#)
            .unwrap()
    });
    let stripped = strip_comments(source);
    let mut kinds = BTreeSet::new();
    for m in token_re.find_iter(&stripped) {
        let tok = m.as_str();
        let kind = classify_token(tok);
        kinds.insert(kind);
    }
    kinds
}

fn classify_token(tok: &str) -> &'static str {
    let first = tok.chars().next().unwrap_or(' ');
    if first.is_ascii_alphabetic() || first == '_' || first == '$' {
        let base = tok.trim_end_matches(|c: char| c.is_ascii_digit());
        if let Some(kw) = KEYWORDS.iter().find(|k| **k == base || **k == tok) {
            return kw;
        }
        return "ident";
    }
    if first.is_ascii_digit() {
        return "number";
    }
    if first == '"' {
        return "string";
    }
    PUNCT.iter().find(|p| **p == tok).copied().unwrap_or("ident")
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARRAY_DELETE: &str = r#"
        pragma solidity ^0.8.0;
        contract C1 {
            int64[] public data;
            function test() public returns (uint ret) {
                data.push(1);
                data.push(2);
                delete data;
                data.push(3);
                return data.length;
            }
        }
    "#;

    #[test]
    fn infers_first_public_zero_arg_function() {
        let sig = infer_entry(ARRAY_DELETE).unwrap();
        assert_eq!(sig.entry.contract, "C1");
        assert_eq!(sig.entry.function, "test");
        assert_eq!(sig.returns, vec!["uint"]);
    }

    #[test]
    fn skips_functions_with_arguments_and_non_public() {
        let src = r#"
            contract A {
                function setUp(uint x) public {}
                function helper() internal returns (bool) {}
                function run() external view returns (uint256, bool ok) {}
            }
        "#;
        let sig = infer_entry(src).unwrap();
        assert_eq!(sig.entry.function, "run");
        assert_eq!(sig.returns, vec!["uint256", "bool"]);
    }

    #[test]
    fn free_functions_are_not_entries() {
        let src = "function lonely() public returns (uint) { return 1; }";
        assert!(infer_entry(src).is_none());
    }

    #[test]
    fn commented_out_functions_are_ignored() {
        let src = r#"
            contract A {
                // function ghost() public returns (uint) {}
                /* function phantom() external {} */
                function real() public {}
            }
        "#;
        let sig = infer_entry(src).unwrap();
        assert_eq!(sig.entry.function, "real");
        assert!(sig.returns.is_empty());
    }

    #[test]
    fn strip_comments_preserves_strings() {
        let src = r#"string s = "not // a comment"; // real"#;
        let out = strip_comments(src);
        assert!(out.contains("not // a comment"));
        assert!(!out.contains("real"));
    }

    #[test]
    fn token_coverage_is_within_bounds_and_monotone_under_new_constructs() {
        let small = token_coverage("contract C {}");
        let larger = token_coverage(ARRAY_DELETE);
        assert!(small.covered <= small.total);
        assert!(larger.covered > small.covered);
        assert_eq!(small.total, TOKEN_VOCABULARY);
    }

    #[test]
    fn token_coverage_is_deterministic() {
        let a = token_coverage(ARRAY_DELETE);
        let b = token_coverage(ARRAY_DELETE);
        assert_eq!(a.covered, b.covered);
        assert_eq!(a.total, b.total);
    }

    #[test]
    fn sized_integer_types_collapse_to_base_keyword() {
        let a = token_kinds("contract C { uint256 x; }");
        let b = token_kinds("contract C { uint128 x; }");
        assert_eq!(a, b);
        assert!(a.contains("uint"));
    }
}
