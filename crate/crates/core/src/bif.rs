//! Reader and writer for the BIF interchange format (bnlearn dialect).
//!
//! Grammar accepted by [`parse_bif`]:
//!
//! ```text
//! document    := network-block (variable-block | probability-block)*
//! network     := "network" WORD "{" property* "}"
//! variable    := "variable" WORD "{" ( "type" "discrete" "[" INT "]" "{" WORD ("," WORD)* "}" ";" | property )* "}"
//! probability := "probability" "(" WORD ( "|" WORD ("," WORD)* )? ")" "{" ( table-row | tuple-row | property )* "}"
//! table-row   := "table" NUMBER (","? NUMBER)* ";"
//! tuple-row   := "(" WORD ("," WORD)* ")" NUMBER (","? NUMBER)* ";"
//! property    := "property" <anything up to ";">
//! ```
//!
//! `//` and `/* */` comments are skipped. A `table` row lists the full table
//! with the child state as the slowest index (column order: last parent
//! fastest). A tuple row gives the child distribution for one parent
//! assignment, parents in the declared order.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::error::ModelError;
use crate::factor::Variable;
use crate::network::{Cpd, CpdMode, DiscreteNetwork};

/// Columns whose sum is further than this from one are rejected.
pub const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BifError {
    #[error("lexical error at {line}:{column}: {message}")]
    Lexical { line: usize, column: usize, message: String },

    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },

    #[error("semantic error: {0}")]
    Semantic(String),

    #[error("share-mode CPD for `{0}` cannot be written as BIF")]
    ShareMode(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_punct(c: char) -> bool {
    matches!(c, '{' | '}' | '(' | ')' | '[' | ']' | ';' | ',' | '|')
}

fn lex(text: &str) -> Result<Vec<Token>, BifError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);
    let advance = |c: char, line: &mut usize, column: &mut usize| {
        if c == '\n' {
            *line += 1;
            *column = 1;
        } else {
            *column += 1;
        }
    };
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            advance(c, &mut line, &mut column);
            continue;
        }
        if c == '/' {
            let (l0, c0) = (line, column);
            chars.next();
            advance(c, &mut line, &mut column);
            match chars.peek() {
                Some('/') => {
                    for c in chars.by_ref() {
                        advance(c, &mut line, &mut column);
                        if c == '\n' {
                            break;
                        }
                    }
                    continue;
                }
                Some('*') => {
                    chars.next();
                    advance('*', &mut line, &mut column);
                    let mut prev = ' ';
                    let mut closed = false;
                    for c in chars.by_ref() {
                        advance(c, &mut line, &mut column);
                        if prev == '*' && c == '/' {
                            closed = true;
                            break;
                        }
                        prev = c;
                    }
                    if !closed {
                        return Err(BifError::Lexical {
                            line: l0,
                            column: c0,
                            message: "unterminated block comment".into(),
                        });
                    }
                    continue;
                }
                _ => {
                    return Err(BifError::Lexical {
                        line: l0,
                        column: c0,
                        message: "stray `/`".into(),
                    })
                }
            }
        }
        if is_punct(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                line,
                column,
            });
            chars.next();
            advance(c, &mut line, &mut column);
            continue;
        }
        if c == '"' {
            return Err(BifError::Lexical {
                line,
                column,
                message: "quoted strings are not supported".into(),
            });
        }
        let (l0, c0) = (line, column);
        let mut word = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() || is_punct(c) || c == '"' {
                break;
            }
            if c == '/' {
                // Only a comment opener terminates a word.
                let mut look = chars.clone();
                look.next();
                if matches!(look.peek(), Some('/') | Some('*')) {
                    break;
                }
            }
            if c.is_control() {
                return Err(BifError::Lexical {
                    line,
                    column,
                    message: format!("unexpected control character {c:?}"),
                });
            }
            word.push(c);
            chars.next();
            advance(c, &mut line, &mut column);
        }
        out.push(Token {
            tok: Tok::Word(word),
            line: l0,
            column: c0,
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

struct ProbBlock {
    child: String,
    parents: Vec<String>,
    table: Option<Vec<f64>>,
    rows: Vec<(Vec<String>, Vec<f64>)>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, BifError> {
        let (line, column) = self
            .tokens
            .get(self.pos)
            .or(self.tokens.last())
            .map_or((1, 1), |t| (t.line, t.column));
        Err(BifError::Syntax {
            line,
            column,
            message: message.into(),
        })
    }

    fn word(&mut self) -> Result<String, BifError> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            Some(Tok::Punct(p)) => {
                let p = *p;
                self.err(format!("expected identifier, found `{p}`"))
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), BifError> {
        let w = self.word()?;
        if w != kw {
            self.pos -= 1;
            return self.err(format!("expected `{kw}`, found `{w}`"));
        }
        Ok(())
    }

    fn punct(&mut self, c: char) -> Result<(), BifError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            Some(Tok::Punct(p)) => {
                let p = *p;
                self.err(format!("expected `{c}`, found `{p}`"))
            }
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.err(format!("expected `{c}`, found `{w}`"))
            }
            None => self.err(format!("expected `{c}`, found end of input")),
        }
    }

    fn at_punct(&self, c: char) -> bool {
        matches!(self.peek(), Some(Tok::Punct(p)) if *p == c)
    }

    fn number(&mut self) -> Result<f64, BifError> {
        let w = self.word()?;
        match w.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => {
                self.pos -= 1;
                self.err(format!("expected a number, found `{w}`"))
            }
        }
    }

    fn skip_statement(&mut self) -> Result<(), BifError> {
        while !self.at_punct(';') {
            if self.peek().is_none() {
                return self.err("unterminated property");
            }
            self.pos += 1;
        }
        self.pos += 1;
        Ok(())
    }

    fn list<T>(&mut self, close: char, mut item: impl FnMut(&mut Self) -> Result<T, BifError>) -> Result<Vec<T>, BifError> {
        let mut out = vec![item(self)?];
        while self.at_punct(',') {
            self.pos += 1;
            out.push(item(self)?);
        }
        self.punct(close)?;
        Ok(out)
    }

    /// Numbers up to `close`; commas between them are optional.
    fn numbers(&mut self, close: char) -> Result<Vec<f64>, BifError> {
        let mut out = vec![self.number()?];
        loop {
            if self.at_punct(close) {
                self.pos += 1;
                return Ok(out);
            }
            if self.at_punct(',') {
                self.pos += 1;
            }
            out.push(self.number()?);
        }
    }

    fn network(&mut self) -> Result<String, BifError> {
        self.keyword("network")?;
        let name = self.word()?;
        self.punct('{')?;
        while !self.at_punct('}') {
            self.keyword("property")?;
            self.skip_statement()?;
        }
        self.punct('}')?;
        Ok(name)
    }

    fn variable(&mut self) -> Result<(String, Vec<String>), BifError> {
        let name = self.word()?;
        self.punct('{')?;
        let mut states = None;
        while !self.at_punct('}') {
            match self.word()?.as_str() {
                "type" => {
                    self.keyword("discrete")?;
                    self.punct('[')?;
                    let n = self.word()?;
                    let n: usize = match n.parse() {
                        Ok(n) => n,
                        Err(_) => {
                            self.pos -= 1;
                            return self.err(format!("expected state count, found `{n}`"));
                        }
                    };
                    self.punct(']')?;
                    self.punct('{')?;
                    let s = self.list('}', |p| p.word())?;
                    self.punct(';')?;
                    if s.len() != n {
                        return Err(BifError::Semantic(format!(
                            "variable `{name}` declares {n} states but lists {}",
                            s.len()
                        )));
                    }
                    states = Some(s);
                }
                "property" => self.skip_statement()?,
                other => {
                    self.pos -= 1;
                    return self.err(format!("unexpected `{other}` in variable block"));
                }
            }
        }
        self.punct('}')?;
        let states = states.ok_or_else(|| BifError::Semantic(format!("variable `{name}` has no type")))?;
        Ok((name, states))
    }

    fn probability(&mut self) -> Result<ProbBlock, BifError> {
        self.punct('(')?;
        let child = self.word()?;
        let parents = if self.at_punct('|') {
            self.pos += 1;
            self.list(')', |p| p.word())?
        } else {
            self.punct(')')?;
            Vec::new()
        };
        self.punct('{')?;
        let mut block = ProbBlock {
            child,
            parents,
            table: None,
            rows: Vec::new(),
        };
        while !self.at_punct('}') {
            if self.at_punct('(') {
                self.pos += 1;
                let key = self.list(')', |p| p.word())?;
                let values = self.numbers(';')?;
                block.rows.push((key, values));
                continue;
            }
            match self.word()?.as_str() {
                "table" => {
                    let values = self.numbers(';')?;
                    if block.table.replace(values).is_some() {
                        return Err(BifError::Semantic(format!("`{}` has two table rows", block.child)));
                    }
                }
                "property" => self.skip_statement()?,
                other => {
                    self.pos -= 1;
                    return self.err(format!("unexpected `{other}` in probability block"));
                }
            }
        }
        self.punct('}')?;
        Ok(block)
    }
}

fn normalize_column(table: &mut [f64], cols: usize, j: usize, child: &str) -> Result<(), BifError> {
    let rows = table.len() / cols;
    let s: f64 = (0..rows).map(|i| table[i * cols + j]).sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(BifError::Semantic(format!("column {j} of `{child}` sums to {s}")));
    }
    if (s - 1.0).abs() > 1e-6 {
        log::warn!("renormalizing column {j} of `{child}` (sum {s})");
    }
    if s != 1.0 {
        for i in 0..rows {
            table[i * cols + j] /= s;
        }
    }
    Ok(())
}

/// Reads and parses a BIF file.
pub fn load_bif(path: &std::path::Path) -> Result<DiscreteNetwork, BifError> {
    let text = std::fs::read_to_string(path).map_err(|e| BifError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_bif(&text)
}

/// Parses a BIF document into a network, preserving declaration order.
pub fn parse_bif(text: &str) -> Result<DiscreteNetwork, BifError> {
    let mut p = Parser {
        tokens: lex(text)?,
        pos: 0,
    };
    let name = p.network()?;
    let mut variables: Vec<Variable> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut blocks: Vec<ProbBlock> = Vec::new();
    while p.peek().is_some() {
        match p.word()?.as_str() {
            "variable" => {
                let (vname, states) = p.variable()?;
                if index.contains_key(&vname) {
                    return Err(BifError::Semantic(format!("variable `{vname}` declared twice")));
                }
                index.insert(vname.clone(), variables.len());
                variables.push(Variable::new(vname, states)?);
            }
            "probability" => blocks.push(p.probability()?),
            other => {
                p.pos -= 1;
                return p.err(format!("expected `variable` or `probability`, found `{other}`"));
            }
        }
    }

    let mut cpds: Vec<Option<Cpd>> = vec![None; variables.len()];
    for block in blocks {
        let lookup = |n: &str| {
            index
                .get(n)
                .copied()
                .ok_or_else(|| BifError::Semantic(format!("undeclared variable `{n}`")))
        };
        let ci = lookup(&block.child)?;
        let child = variables[ci].clone();
        let parents: Vec<Variable> = block
            .parents
            .iter()
            .map(|n| lookup(n).map(|i| variables[i].clone()))
            .collect::<Result<_, _>>()?;
        let rows = child.cardinality();
        let cols: usize = parents.iter().map(Variable::cardinality).product();
        let mut table = vec![f64::NAN; rows * cols];
        if let Some(t) = block.table {
            if t.len() != rows * cols {
                return Err(BifError::Semantic(format!(
                    "table for `{}` has {} values, expected {}",
                    child.name(),
                    t.len(),
                    rows * cols
                )));
            }
            table = t;
        }
        for (key, values) in block.rows {
            if key.len() != parents.len() {
                return Err(BifError::Semantic(format!(
                    "row for `{}` names {} parent states, expected {}",
                    child.name(),
                    key.len(),
                    parents.len()
                )));
            }
            if values.len() != rows {
                return Err(BifError::Semantic(format!(
                    "row for `{}` has {} values, expected {rows}",
                    child.name(),
                    values.len()
                )));
            }
            let mut col = 0;
            for (p, s) in parents.iter().zip(&key) {
                col = col * p.cardinality() + p.state_index_or_err(s)?;
            }
            for (i, v) in values.into_iter().enumerate() {
                table[i * cols + col] = v;
            }
        }
        if let Some(j) = (0..cols).find(|&j| table[j].is_nan()) {
            return Err(BifError::Semantic(format!(
                "`{}` has no probabilities for parent column {j}",
                child.name()
            )));
        }
        if let Some(bad) = table.iter().find(|x| **x < 0.0) {
            return Err(BifError::Semantic(format!("negative probability {bad} for `{}`", child.name())));
        }
        for j in 0..cols {
            normalize_column(&mut table, cols, j, child.name())?;
        }
        if cpds[ci].is_some() {
            return Err(BifError::Semantic(format!("`{}` has two probability blocks", child.name())));
        }
        cpds[ci] = Some(Cpd::new(child, parents, table, CpdMode::Probability)?);
    }
    let cpds = cpds
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| BifError::Semantic(format!("`{}` has no probability block", variables[i].name()))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DiscreteNetwork::new(name, cpds)?)
}

/// Serializes a probability-mode network. Values are written in shortest
/// round-trip form; parsing the output reproduces names, states and edges
/// exactly and values up to the last-ulp drift of column renormalization.
pub fn write_bif(network: &DiscreteNetwork) -> Result<String, BifError> {
    if let Some(c) = network.cpds().iter().find(|c| c.mode() == CpdMode::Share) {
        return Err(BifError::ShareMode(c.child().name().to_string()));
    }
    let mut out = String::new();
    let name = if network.name().is_empty() { "unknown" } else { network.name() };
    let _ = writeln!(out, "network {name} {{\n}}");
    for v in network.variables() {
        let _ = writeln!(
            out,
            "variable {} {{\n  type discrete [ {} ] {{ {} }};\n}}",
            v.name(),
            v.cardinality(),
            v.states().join(", ")
        );
    }
    let fmt_values = |vals: &mut dyn Iterator<Item = f64>| vals.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
    for cpd in network.cpds() {
        let child = cpd.child().name();
        if cpd.parents().is_empty() {
            let _ = writeln!(
                out,
                "probability ( {child} ) {{\n  table {};\n}}",
                fmt_values(&mut cpd.table().iter().copied())
            );
            continue;
        }
        let _ = writeln!(out, "probability ( {child} | {} ) {{", cpd.parent_names().join(", "));
        let cards: Vec<usize> = cpd.parents().iter().map(Variable::cardinality).collect();
        let mut counter = vec![0usize; cards.len()];
        for j in 0..cpd.columns() {
            let key: Vec<&str> = cpd
                .parents()
                .iter()
                .zip(&counter)
                .map(|(p, &i)| p.states()[i].as_str())
                .collect();
            let _ = writeln!(out, "  ({}) {};", key.join(", "), fmt_values(&mut cpd.column(j).into_iter()));
            for d in (0..cards.len()).rev() {
                counter[d] += 1;
                if counter[d] < cards[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        out.push_str("}\n");
    }
    Ok(out)
}
