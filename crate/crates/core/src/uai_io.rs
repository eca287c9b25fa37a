//! Reading and writing the UAI competition formats.
//!
//! Networks: `MARKOV n d_1..d_n m`, then `m` scopes `k v_1..v_k`, then `m`
//! tables `len e_1..e_len`. Evidence: `count` then `var value` pairs.

use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::model::{Assignment, Factor, MarkovNetwork, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("input is not valid UTF-8")]
    Encoding,
    #[error("unexpected end of input, expected {0}")]
    UnexpectedEof(&'static str),
    #[error("unsupported preamble `{0}`")]
    UnsupportedPreamble(String),
    #[error("expected {expected}, found `{found}`")]
    BadToken { expected: &'static str, found: String },
    #[error("variable {var} is out of range for {count} variables")]
    VariableOutOfRange { var: usize, count: usize },
    #[error("cardinality must be at least 1")]
    ZeroCardinality,
    #[error("table of factor {factor} has {found} entries, scope needs {expected}")]
    TableLength { factor: usize, expected: usize, found: usize },
    #[error("table size of factor {factor} overflows")]
    TableTooLarge { factor: usize },
    #[error("trailing token `{0}`")]
    Trailing(String),
    #[error("marginal of variable {var} sums to {sum}")]
    NotNormalized { var: usize, sum: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A parse failure with the 1-based line/column and 0-based index of the
/// offending token (or of end of input).
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub token: usize,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {} (token {}): {}", self.line, self.column, self.token, self.kind)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject `BAYES` preambles instead of reading them as Markov networks.
    pub strict: bool,
}

struct Tokens<'a> {
    text: &'a str,
    offset: usize,
    index: usize,
    line: usize,
    column: usize,
}

struct Token<'a> {
    text: &'a str,
    index: usize,
    line: usize,
    column: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens {
            text,
            offset: 0,
            index: 0,
            line: 1,
            column: 1,
        }
    }

    fn next(&mut self) -> Option<Token<'a>> {
        let rest = &self.text[self.offset..];
        let mut chars = rest.char_indices().peekable();
        while let Some(&(_, c)) = chars.peek() {
            if !c.is_whitespace() {
                break;
            }
            if c == '\n' {
                self.line += 1;
                self.column = 1;
            } else {
                self.column += 1;
            }
            chars.next();
        }
        let start = chars.peek().map(|&(i, _)| i)?;
        let end = rest[start..]
            .find(char::is_whitespace)
            .map(|e| start + e)
            .unwrap_or(rest.len());
        let token = Token {
            text: &rest[start..end],
            index: self.index,
            line: self.line,
            column: self.column,
        };
        self.column += rest[start..end].chars().count();
        self.offset += end;
        self.index += 1;
        Some(token)
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            kind,
            token: self.index,
            line: self.line,
            column: self.column,
        }
    }

    fn expect(&mut self, what: &'static str) -> Result<Token<'a>, ParseError> {
        self.next()
            .ok_or_else(|| self.error_here(ParseErrorKind::UnexpectedEof(what)))
    }

    fn usize(&mut self, what: &'static str) -> Result<(usize, Token<'a>), ParseError> {
        let t = self.expect(what)?;
        match t.text.parse::<usize>() {
            Ok(v) => Ok((v, t)),
            Err(_) => Err(t.error(ParseErrorKind::BadToken {
                expected: what,
                found: t.text.to_string(),
            })),
        }
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, ParseError> {
        let t = self.expect(what)?;
        match t.text.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(t.error(ParseErrorKind::BadToken {
                expected: what,
                found: t.text.to_string(),
            })),
        }
    }

    fn finish(mut self) -> Result<(), ParseError> {
        match self.next() {
            None => Ok(()),
            Some(t) => Err(t.error(ParseErrorKind::Trailing(t.text.to_string()))),
        }
    }
}

impl Token<'_> {
    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            kind,
            token: self.index,
            line: self.line,
            column: self.column,
        }
    }
}

fn decode(bytes: &[u8]) -> Result<&str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| {
        let valid = &bytes[..e.valid_up_to()];
        let line = 1 + valid.iter().filter(|&&b| b == b'\n').count();
        let column = 1 + valid.iter().rev().take_while(|&&b| b != b'\n').count();
        ParseError {
            kind: ParseErrorKind::Encoding,
            token: 0,
            line,
            column,
        }
    })
}

pub fn parse_network(text: &str) -> Result<MarkovNetwork, ParseError> {
    parse_network_with(text, ParseOptions::default())
}

pub fn parse_network_bytes(bytes: &[u8], options: ParseOptions) -> Result<MarkovNetwork, ParseError> {
    parse_network_with(decode(bytes)?, options)
}

pub fn parse_network_with(text: &str, options: ParseOptions) -> Result<MarkovNetwork, ParseError> {
    let mut tokens = Tokens::new(text);
    let preamble = tokens.expect("preamble")?;
    match preamble.text {
        "MARKOV" => {}
        "BAYES" if !options.strict => {}
        other => return Err(preamble.error(ParseErrorKind::UnsupportedPreamble(other.to_string()))),
    }
    let (n, _) = tokens.usize("variable count")?;
    let mut cards = Vec::new();
    for _ in 0..n {
        let (c, t) = tokens.usize("cardinality")?;
        if c == 0 {
            return Err(t.error(ParseErrorKind::ZeroCardinality));
        }
        cards.push(c);
    }
    let (m, _) = tokens.usize("factor count")?;
    let mut scopes = Vec::new();
    for _ in 0..m {
        let (k, _) = tokens.usize("scope size")?;
        let mut scope = Vec::new();
        for _ in 0..k {
            let (v, t) = tokens.usize("variable id")?;
            if v >= n {
                return Err(t.error(ParseErrorKind::VariableOutOfRange { var: v, count: n }));
            }
            if scope.contains(&v) {
                return Err(t.error(ParseErrorKind::Model(ModelError::DuplicateVariable(v))));
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::new();
    for (i, scope) in scopes.into_iter().enumerate() {
        let (len, t) = tokens.usize("table length")?;
        let expected = scope
            .iter()
            .try_fold(1usize, |acc, &v| acc.checked_mul(cards[v]))
            .ok_or_else(|| t.error(ParseErrorKind::TableTooLarge { factor: i }))?;
        if len != expected {
            return Err(t.error(ParseErrorKind::TableLength {
                factor: i,
                expected,
                found: len,
            }));
        }
        let mut table = Vec::new();
        for _ in 0..len {
            table.push(tokens.f64("table entry")?);
        }
        let fcards = scope.iter().map(|&v| cards[v]).collect();
        let factor = Factor::new(scope, fcards, table).map_err(|e| t.error(e.into()))?;
        factors.push(factor);
    }
    let at_end = tokens.error_here(ParseErrorKind::UnexpectedEof(""));
    tokens.finish()?;
    MarkovNetwork::new(cards, factors).map_err(|e| ParseError {
        kind: e.into(),
        ..at_end
    })
}

pub fn parse_evidence(text: &str) -> Result<Assignment, ParseError> {
    let mut tokens = Tokens::new(text);
    let mut evidence = Assignment::new();
    if text.trim().is_empty() {
        return Ok(evidence);
    }
    let (count, _) = tokens.usize("evidence count")?;
    for _ in 0..count {
        let (var, _) = tokens.usize("evidence variable")?;
        let (value, _) = tokens.usize("evidence value")?;
        evidence.insert(var, value);
    }
    tokens.finish()?;
    Ok(evidence)
}

pub fn parse_evidence_bytes(bytes: &[u8]) -> Result<Assignment, ParseError> {
    parse_evidence(decode(bytes)?)
}

/// Serializes in the same layout the parser reads. Numbers use the
/// shortest representation that parses back to the same double, so
/// write/parse/write is byte-stable.
pub fn write_network(net: &MarkovNetwork) -> String {
    let mut out = String::from("MARKOV\n");
    let _ = writeln!(out, "{}", net.num_variables());
    let _ = writeln!(out, "{}", join(net.cardinalities()));
    let _ = writeln!(out, "{}", net.factors().len());
    for f in net.factors() {
        let _ = writeln!(out, "{} {}", f.scope().len(), join(f.scope()));
    }
    for f in net.factors() {
        let _ = writeln!(out, "\n{}", f.len());
        let _ = writeln!(out, "{}", join(&f.scaled_table()));
    }
    out.replace(" \n", "\n")
}

pub fn write_evidence(evidence: &Assignment) -> String {
    let mut out = evidence.len().to_string();
    for (v, x) in evidence.iter() {
        let _ = write!(out, " {v} {x}");
    }
    out.push('\n');
    out
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Marginal file: variable count, then one line per variable with its
/// cardinality and probabilities.
pub fn write_marginals(estimates: &[Vec<f64>]) -> Result<String, ParseErrorKind> {
    let mut out = estimates.len().to_string();
    for (var, dist) in estimates.iter().enumerate() {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || dist.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ParseErrorKind::NotNormalized { var, sum });
        }
        let _ = write!(out, "\n{} {}", dist.len(), join(dist));
    }
    Ok(out)
}

pub fn parse_marginals(text: &str) -> Result<Vec<Vec<f64>>, ParseError> {
    let mut tokens = Tokens::new(text);
    let (count, _) = tokens.usize("variable count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let (card, _) = tokens.usize("cardinality")?;
        let mut dist = Vec::new();
        for _ in 0..card {
            dist.push(tokens.f64("probability")?);
        }
        out.push(dist);
    }
    tokens.finish()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub time_s: f64,
    pub samples: u64,
    pub avg_hellinger: f64,
    pub algo: String,
    pub seed: u64,
}

pub fn write_convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["time_s", "samples", "avg_hellinger", "algo", "seed"])
            .expect("in-memory write");
    }
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_network() {
        let net = parse_network("MARKOV\n2\n2 2\n1\n2 0 1\n4\n1 2 3 4").unwrap();
        assert_eq!(net.cardinalities(), &[2, 2]);
        assert_eq!(net.factors()[0].scope(), &[0, 1]);
        assert_eq!(net.factors()[0].table(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bayes_preamble_depends_on_strictness() {
        let text = "BAYES 1 2 1 1 0 2 0.4 0.6";
        assert!(parse_network(text).is_ok());
        let err = parse_network_with(text, ParseOptions { strict: true }).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::UnsupportedPreamble(_)));
        assert_eq!(err.to_string(), "line 1, column 1 (token 0): unsupported preamble `BAYES`");
    }

    #[test]
    fn table_length_mismatch_is_positioned() {
        let err = parse_network("MARKOV\n2\n2 2\n1\n2 0 1\n3\n1 2 3").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::TableLength { expected: 4, found: 3, .. }));
        assert_eq!((err.line, err.column, err.token), (6, 1, 8));
    }

    #[test]
    fn non_numeric_and_truncated_inputs() {
        let err = parse_network("MARKOV 1 x").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::BadToken { .. }));
        assert_eq!(err.column, 10);
        let err = parse_network("MARKOV 1 2 1 1 0 2 0.5").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::UnexpectedEof(_)));
        assert!(parse_network("MARKOV 1 2 1 1 3 2 0.5 0.5").is_err());
        assert!(parse_network("MARKOV 1 2 0 extra").is_err());
        assert!(parse_network("MARKOV 1 2 1 1 0 2 -1 2").is_err());
        assert!(parse_network("MARKOV 1 2 1 1 0 2 0 0").is_err());
    }

    #[test]
    fn huge_declared_counts_do_not_allocate() {
        assert!(parse_network("MARKOV 18446744073709551615").is_err());
        let err = parse_network("MARKOV 3 4294967296 4294967296 4294967296 1 3 0 1 2 1").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::TableTooLarge { .. }));
    }

    #[test]
    fn scientific_notation_is_accepted() {
        let net = parse_network("MARKOV 1 2 1 1 0 2 1e-3 2.5E2").unwrap();
        assert_eq!(net.factors()[0].table(), &[1e-3, 250.0]);
    }

    #[test]
    fn evidence_examples() {
        let e = parse_evidence("2 0 1 3 0").unwrap();
        assert_eq!(e.get(0), Some(1));
        assert_eq!(e.get(3), Some(0));
        assert!(parse_evidence("0").unwrap().is_empty());
        assert!(parse_evidence("").unwrap().is_empty());
        assert!(parse_evidence("1 5").is_err());
        assert_eq!(write_evidence(&e), "2 0 1 3 0\n");
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(write_marginals(&[vec![0.25, 0.75]]).unwrap(), "1\n2 0.25 0.75");
        assert_eq!(write_marginals(&[]).unwrap(), "0");
        assert!(write_marginals(&[vec![0.5, 0.6]]).is_err());
        let m = vec![vec![0.1, 0.2, 0.7], vec![1.0 / 3.0, 2.0 / 3.0]];
        let back = parse_marginals(&write_marginals(&m).unwrap()).unwrap();
        for (a, b) in m.iter().flatten().zip(back.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn write_parse_roundtrip() {
        let text = "MARKOV\n3\n2 3 2\n3\n1 0\n2 0 1\n2 1 2\n\n2\n0.5 1.5\n\n6\n1 2 3 4 5 6\n\n6\n0.1 0 3 0.00001 2 2\n";
        let net = parse_network(text).unwrap();
        let written = write_network(&net);
        assert_eq!(written, text);
        let again = parse_network(&written).unwrap();
        assert_eq!(write_network(&again), written);
    }

    #[test]
    fn convergence_csv_layout() {
        let rows = vec![ConvergenceRow {
            time_s: 0.5,
            samples: 1000,
            avg_hellinger: 0.125,
            algo: "dbcg".into(),
            seed: 7,
        }];
        assert_eq!(
            write_convergence_csv(&rows),
            "time_s,samples,avg_hellinger,algo,seed\n0.5,1000,0.125,dbcg,7\n"
        );
        assert_eq!(write_convergence_csv(&[]), "time_s,samples,avg_hellinger,algo,seed\n");
    }
}
