//! Parsing of disassembler listings into categorized instruction streams.
//!
//! A listing line looks like
//!
//! ```text
//! 03f6438 83a1 MOV  AL,@VarA ;Load AL with  VarA
//! ```
//!
//! i.e. a hex address, zero or more raw opcode words, an uppercase mnemonic,
//! free-form operands and an optional `;` comment. Anything else (labels,
//! directives, blank lines, comment-only lines) is not an instruction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five instruction classes tracked by the counters, plus `Other`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionCategory {
    #[serde(alias = "arith")]
    Arithmetic,
    #[serde(alias = "bool")]
    Boolean,
    Store,
    Load,
    Branch,
    Other,
}

impl InstructionCategory {
    /// Counted classes in feature order (`a, b, l, n, s`).
    pub const COUNTED: [InstructionCategory; 5] = [
        InstructionCategory::Arithmetic,
        InstructionCategory::Branch,
        InstructionCategory::Load,
        InstructionCategory::Boolean,
        InstructionCategory::Store,
    ];

    /// Single-letter symbol used in feature names. `None` for `Other`.
    pub fn symbol(self) -> Option<char> {
        match self {
            InstructionCategory::Arithmetic => Some('a'),
            InstructionCategory::Boolean => Some('n'),
            InstructionCategory::Store => Some('s'),
            InstructionCategory::Load => Some('l'),
            InstructionCategory::Branch => Some('b'),
            InstructionCategory::Other => None,
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'a' => Some(InstructionCategory::Arithmetic),
            'n' => Some(InstructionCategory::Boolean),
            's' => Some(InstructionCategory::Store),
            'l' => Some(InstructionCategory::Load),
            'b' => Some(InstructionCategory::Branch),
            _ => None,
        }
    }

    /// Position in [`Self::COUNTED`], `None` for `Other`.
    pub fn counted_index(self) -> Option<usize> {
        match self {
            InstructionCategory::Arithmetic => Some(0),
            InstructionCategory::Branch => Some(1),
            InstructionCategory::Load => Some(2),
            InstructionCategory::Boolean => Some(3),
            InstructionCategory::Store => Some(4),
            InstructionCategory::Other => None,
        }
    }
}

impl fmt::Display for InstructionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InstructionCategory::Arithmetic => "arithmetic",
            InstructionCategory::Boolean => "boolean",
            InstructionCategory::Store => "store",
            InstructionCategory::Load => "load",
            InstructionCategory::Branch => "branch",
            InstructionCategory::Other => "other",
        };
        f.write_str(s)
    }
}

/// Mnemonic to category table. Lookups are total: unknown mnemonics are `Other`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub name: String,
    pub categories: BTreeMap<String, InstructionCategory>,
}

const C28X_LOAD: &[&str] = &["MOV", "MOVL", "MOVZ", "MOVU", "MOVB", "MOVW", "MOV32", "POP"];
const C28X_ARITH: &[&str] = &[
    "ADD", "ADDB", "ADDL", "ADDU", "ADDCU", "ADDCL", "SUB", "SUBB", "SUBL", "SUBU", "SUBBL", "SUBCU", "INC", "DEC",
    "NEG", "ABS", "MPY", "MPYB", "MPYU", "MPYXU", "IMPYL", "QMPYL", "MAC", "IMACL", "QMACL", "ASR", "ASR64", "CMP",
    "CMPB", "CMPL", "ADDF32", "SUBF32", "MPYF32",
];
const C28X_BOOL: &[&str] = &["AND", "ANDB", "OR", "ORB", "XOR", "XORB", "NOT", "TBIT", "LSL", "LSR", "ROL", "ROR"];
const C28X_STORE: &[&str] = &["MOVH", "MOVDL", "PUSH"];
const C28X_BRANCH: &[&str] =
    &["B", "BF", "SB", "SBF", "LB", "LC", "LCR", "LRETR", "RET", "RETE", "IRET", "BANZ", "BAR", "FFC", "INTR", "TRAP"];

impl CategoryMap {
    pub fn new(name: impl Into<String>) -> Self {
        CategoryMap { name: name.into(), categories: BTreeMap::new() }
    }

    /// The shipped TMS320C28x table.
    ///
    /// Covers the Listing-style mnemonics (`MOV`, `ADD`, `ANDB`, `SUBB`, `B`) plus the
    /// common C28x arithmetic, logic, store and flow-control opcodes. Multiply-accumulate
    /// and compare are arithmetic; shifts other than `ASR` are boolean.
    pub fn c28x_default() -> Self {
        let mut map = CategoryMap::new("ti-c28x-default");
        let groups = [
            (C28X_LOAD, InstructionCategory::Load),
            (C28X_ARITH, InstructionCategory::Arithmetic),
            (C28X_BOOL, InstructionCategory::Boolean),
            (C28X_STORE, InstructionCategory::Store),
            (C28X_BRANCH, InstructionCategory::Branch),
        ];
        for (mnemonics, cat) in groups {
            for m in mnemonics {
                map.insert(m, cat);
            }
        }
        map
    }

    pub fn insert(&mut self, mnemonic: &str, category: InstructionCategory) {
        self.categories.insert(mnemonic.to_ascii_uppercase(), category);
    }

    pub fn classify(&self, mnemonic: &str) -> InstructionCategory {
        classify_mnemonic(mnemonic, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CategoryMap = serde_json::from_str(text)?;
        // keys are matched case-insensitively against uppercased mnemonics
        let mut map = CategoryMap::new(raw.name);
        for (m, c) in raw.categories {
            map.insert(&m, c);
        }
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("category map serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Default for CategoryMap {
    fn default() -> Self {
        Self::c28x_default()
    }
}

/// Lookup of a mnemonic's class. Unmapped mnemonics are `Other`.
pub fn classify_mnemonic(mnemonic: &str, map: &CategoryMap) -> InstructionCategory {
    if let Some(c) = map.categories.get(mnemonic) {
        return *c;
    }
    map.categories.get(&mnemonic.to_ascii_uppercase()).copied().unwrap_or(InstructionCategory::Other)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub address: String,
    pub raw_opcode: Option<String>,
    pub mnemonic: String,
    pub operands: String,
    pub category: InstructionCategory,
}

impl Instruction {
    /// Canonical single-line rendering (no comment).
    pub fn to_listing_line(&self) -> String {
        let mut line = self.address.clone();
        if let Some(op) = &self.raw_opcode {
            line.push(' ');
            line.push_str(op);
        }
        line.push(' ');
        line.push_str(&self.mnemonic);
        if !self.operands.is_empty() {
            line.push(' ');
            line.push_str(&self.operands);
        }
        line
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

impl FromStr for ParseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(ParseMode::Strict),
            "lenient" => Ok(ParseMode::Lenient),
            other => Err(Error::Invalid(format!("unknown parse mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedListing {
    pub instructions: Vec<Instruction>,
    /// Non-blank lines that were not instructions (labels, directives, junk).
    pub skipped: usize,
    /// 1-based line numbers of lines that looked like instructions but were malformed.
    pub malformed: Vec<usize>,
}

/// What a single listing line turned out to be.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LineKind {
    Blank,
    Comment,
    Label,
    Directive,
    Instruction(Instruction),
    Malformed,
}

fn is_hex(tok: &str) -> bool {
    !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_hexdigit())
}

// Opcode words are 4 or 8 hex digits; the digit/lowercase requirement keeps
// all-hex mnemonics such as `ADD` or `ADDB` out.
fn is_opcode_word(tok: &str) -> bool {
    (tok.len() == 4 || tok.len() == 8)
        && is_hex(tok)
        && tok.bytes().any(|b| b.is_ascii_digit() || b.is_ascii_lowercase())
}

fn is_mnemonic(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Classify one line of listing text.
pub fn parse_line(line: &str, map: &CategoryMap) -> LineKind {
    let code = match line.find(';') {
        Some(i) => &line[..i],
        None => line,
    };
    let code = code.trim();
    if code.is_empty() {
        return if line.trim().is_empty() { LineKind::Blank } else { LineKind::Comment };
    }
    let first = code.split_whitespace().next().unwrap_or_default();
    if first.ends_with(':') {
        return LineKind::Label;
    }
    if !is_hex(first) {
        return LineKind::Directive;
    }

    let address = first;
    let mut rest = code[address.len()..].trim_start();
    let mut opcode_words: Vec<&str> = Vec::new();
    loop {
        let tok = rest.split_whitespace().next().unwrap_or_default();
        if tok.is_empty() {
            return LineKind::Malformed;
        }
        if !(is_opcode_word(tok) && followed_by_token(rest, tok)) {
            break;
        }
        opcode_words.push(tok);
        rest = rest[tok.len()..].trim_start();
    }
    let tok = rest.split_whitespace().next().unwrap_or_default();
    if !is_mnemonic(tok) {
        return LineKind::Malformed;
    }
    let operands = rest[tok.len()..].trim();
    let mnemonic = tok.to_ascii_uppercase();
    let category = classify_mnemonic(&mnemonic, map);
    LineKind::Instruction(Instruction {
        address: address.to_string(),
        raw_opcode: if opcode_words.is_empty() { None } else { Some(opcode_words.join(" ")) },
        mnemonic,
        operands: normalize_operands(operands),
        category,
    })
}

fn followed_by_token(rest: &str, tok: &str) -> bool {
    rest[tok.len()..].split_whitespace().next().is_some()
}

fn normalize_operands(ops: &str) -> String {
    ops.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parse a whole listing. In strict mode the first malformed line is an error.
pub fn parse_listing(text: &str, map: &CategoryMap, mode: ParseMode) -> Result<ParsedListing> {
    let mut out = ParsedListing::default();
    for (idx, line) in text.lines().enumerate() {
        match parse_line(line, map) {
            LineKind::Blank => {}
            LineKind::Comment | LineKind::Label | LineKind::Directive => out.skipped += 1,
            LineKind::Instruction(i) => out.instructions.push(i),
            LineKind::Malformed => {
                if mode == ParseMode::Strict {
                    return Err(Error::MalformedLine { line: idx + 1, text: line.to_string() });
                }
                out.skipped += 1;
                out.malformed.push(idx + 1);
            }
        }
    }
    Ok(out)
}

/// Render instructions back to canonical listing text.
pub fn to_listing(instrs: &[Instruction]) -> String {
    let mut s = String::new();
    for i in instrs {
        s.push_str(&i.to_listing_line());
        s.push('\n');
    }
    s
}
