//! Parametric QoS formulas: a small arithmetic language over named
//! probability variables.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := NUMBER | IDENT | '(' expr ')'
//! ```
//!
//! Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("empty formula")]
    Empty,
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite value {value} for variable `{name}`")]
    NonFinite { name: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn apply(self, lhs: f64, rhs: f64) -> Result<f64, FormulaError> {
        Ok(match self {
            BinOp::Add => lhs + rhs,
            BinOp::Sub => lhs - rhs,
            BinOp::Mul => lhs * rhs,
            BinOp::Div => {
                if rhs == 0.0 {
                    return Err(FormulaError::DivisionByZero);
                }
                lhs / rhs
            }
        })
    }

    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Group(Box<Expr>),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn group(inner: Expr) -> Expr {
        Expr::Group(Box::new(inner))
    }

    pub fn eval(&self, bindings: &Binding) -> Result<f64, FormulaError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => bindings
                .get(name)
                .ok_or_else(|| FormulaError::UnboundVariable(name.clone())),
            Expr::Binary { op, lhs, rhs } => {
                let l = lhs.eval(bindings)?;
                let r = rhs.eval(bindings)?;
                op.apply(l, r)
            }
            Expr::Group(inner) => inner.eval(bindings),
        }
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                if !out.iter().any(|v| v == name) {
                    out.push(name.clone());
                }
            }
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expr::Group(inner) => inner.collect_vars(out),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{}` on f64 prints the shortest string that parses back to the same value
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Binary { op, lhs, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
            Expr::Group(inner) => write!(f, "({inner})"),
        }
    }
}

/// Variable name to probability value. Values must be finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding(BTreeMap<String, f64>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) -> Result<(), FormulaError> {
        let name = name.into();
        if !value.is_finite() {
            return Err(FormulaError::NonFinite { name, value });
        }
        self.0.insert(name, value);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Result<Self, FormulaError> {
        self.set(name, value)?;
        Ok(self)
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self, FormulaError> {
        let mut b = Binding::new();
        for (k, v) in pairs {
            b.set(k, v)?;
        }
        Ok(b)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricFormula {
    root: Expr,
    variables: Vec<String>,
}

impl ParametricFormula {
    pub fn from_expr(root: Expr) -> Self {
        let mut variables = Vec::new();
        root.collect_vars(&mut variables);
        Self { root, variables }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    /// Distinct variable names in first-occurrence order.
    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn evaluate(&self, bindings: &Binding) -> Result<f64, FormulaError> {
        self.root.eval(bindings)
    }
}

impl fmt::Display for ParametricFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for ParametricFormula {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_formula(s)
    }
}

pub fn parse_formula(text: &str) -> Result<ParametricFormula, FormulaError> {
    let tokens = lex(text)?;
    if tokens.len() == 1 {
        return Err(FormulaError::Empty);
    }
    let mut parser = Parser { tokens, pos: 0 };
    let root = parser.expr()?;
    let tok = parser.peek();
    if tok.kind != TokenKind::Eof {
        return Err(tok.error(format!("unexpected {}", tok.kind.describe())));
    }
    Ok(ParametricFormula::from_expr(root))
}

pub fn evaluate(formula: &ParametricFormula, bindings: &Binding) -> Result<f64, FormulaError> {
    formula.evaluate(bindings)
}

pub fn list_variables(formula: &ParametricFormula) -> Vec<String> {
    formula.variables.clone()
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(BinOp),
    LParen,
    RParen,
    Eof,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(op) => format!("operator `{}`", op.symbol()),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    line: usize,
    column: usize,
}

impl Token {
    fn error(&self, message: String) -> FormulaError {
        FormulaError::Syntax {
            line: self.line,
            column: self.column,
            message,
        }
    }
}

fn lex(text: &str) -> Result<Vec<Token>, FormulaError> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut column = 1;
    let mut chars = text.chars().peekable();
    let mut at_line_start = true;

    while let Some(&c) = chars.peek() {
        if c == '\n' {
            chars.next();
            line += 1;
            column = 1;
            at_line_start = true;
            continue;
        }
        if c.is_whitespace() {
            chars.next();
            column += 1;
            continue;
        }
        if c == '#' && at_line_start {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
            }
            continue;
        }
        at_line_start = false;
        let start = column;
        let kind = match c {
            '+' | '-' | '*' | '/' => {
                chars.next();
                column += 1;
                TokenKind::Op(match c {
                    '+' => BinOp::Add,
                    '-' => BinOp::Sub,
                    '*' => BinOp::Mul,
                    _ => BinOp::Div,
                })
            }
            '(' => {
                chars.next();
                column += 1;
                TokenKind::LParen
            }
            ')' => {
                chars.next();
                column += 1;
                TokenKind::RParen
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    let exp_sign = (d == '+' || d == '-') && s.ends_with(['e', 'E']);
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        s.push(d);
                        chars.next();
                        column += 1;
                    } else {
                        break;
                    }
                }
                let v: f64 = s.parse().map_err(|_| FormulaError::Syntax {
                    line,
                    column: start,
                    message: format!("malformed number `{s}`"),
                })?;
                TokenKind::Num(v)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        s.push(d);
                        chars.next();
                        column += 1;
                    } else {
                        break;
                    }
                }
                TokenKind::Ident(s)
            }
            other => {
                return Err(FormulaError::Syntax {
                    line,
                    column,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        tokens.push(Token {
            kind,
            line,
            column: start,
        });
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        line,
        column,
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.term()?;
        while let TokenKind::Op(op @ (BinOp::Add | BinOp::Sub)) = self.peek().kind {
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.factor()?;
        while let TokenKind::Op(op @ (BinOp::Mul | BinOp::Div)) = self.peek().kind {
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, FormulaError> {
        let tok = self.bump();
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Num(v)),
            TokenKind::Ident(name) => Ok(Expr::Var(name)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                let close = self.bump();
                if close.kind != TokenKind::RParen {
                    return Err(close.error(format!(
                        "expected `)` to close `(` at column {}, found {}",
                        tok.column,
                        close.kind.describe()
                    )));
                }
                Ok(Expr::group(inner))
            }
            ref other => Err(tok.error(format!(
                "expected number, identifier or `(`, found {}",
                other.describe()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b(pairs: &[(&str, f64)]) -> Binding {
        Binding::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn parses_grouped_average() {
        let f = parse_formula("0.5*(p1+p2)").unwrap();
        assert_eq!(f.variables(), ["p1", "p2"]);
        assert_relative_eq!(f.evaluate(&b(&[("p1", 0.8), ("p2", 1.0)])).unwrap(), 0.9);
    }

    #[test]
    fn single_variable_and_constant() {
        let f = parse_formula("p1").unwrap();
        assert_eq!(f.root(), &Expr::Var("p1".into()));
        let c = parse_formula("3.0").unwrap();
        assert!(list_variables(&c).is_empty());
        assert_eq!(c.evaluate(&Binding::new()).unwrap(), 3.0);
    }

    #[test]
    fn first_occurrence_order() {
        let f = parse_formula("p2*p1 + p2").unwrap();
        assert_eq!(list_variables(&f), vec!["p2", "p1"]);
    }

    #[test]
    fn unclosed_paren_reports_position() {
        match parse_formula("0.5*(p1+") {
            Err(FormulaError::Syntax { line, column, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(column, 9);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
        let err = parse_formula("# header\n(p1 * p2").unwrap_err();
        assert!(matches!(err, FormulaError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_and_comment_only_inputs() {
        assert_eq!(parse_formula(""), Err(FormulaError::Empty));
        assert_eq!(parse_formula("  \n# nothing\n"), Err(FormulaError::Empty));
    }

    #[test]
    fn trailing_garbage_rejected() {
        assert!(matches!(
            parse_formula("p1 p2"),
            Err(FormulaError::Syntax { column: 4, .. })
        ));
        assert!(matches!(
            parse_formula("p1 $ 2"),
            Err(FormulaError::Syntax { .. })
        ));
    }

    #[test]
    fn evaluation_errors() {
        let f = parse_formula("0.5*(p1+p2)").unwrap();
        assert_eq!(
            f.evaluate(&b(&[("p1", 0.8)])),
            Err(FormulaError::UnboundVariable("p2".into()))
        );
        let g = parse_formula("p1/(p2-p2)").unwrap();
        assert_eq!(
            g.evaluate(&b(&[("p1", 1.0), ("p2", 0.3)])),
            Err(FormulaError::DivisionByZero)
        );
        assert_eq!(
            parse_formula("p1*p2")
                .unwrap()
                .evaluate(&b(&[("p1", 1.0), ("p2", 1.0)])),
            Ok(1.0)
        );
    }

    #[test]
    fn comments_and_exponents() {
        let f = parse_formula("# reliability\n# of the hub\n rproc * 1e-1 + 2.5E+0\n").unwrap();
        assert_relative_eq!(f.evaluate(&b(&[("rproc", 1.0)])).unwrap(), 2.6);
    }

    #[test]
    fn binding_rejects_non_finite() {
        assert!(Binding::new().set("p", f64::NAN).is_err());
        assert!(Binding::new().set("p", f64::INFINITY).is_err());
    }

    #[test]
    fn left_associative_subtraction_and_division() {
        let f = parse_formula("8 - 4 - 2 + 12 / 3 / 2").unwrap();
        assert_eq!(f.evaluate(&Binding::new()).unwrap(), 4.0);
        let back = parse_formula(&f.to_string()).unwrap();
        assert_eq!(back, f);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Expr::Num),
            prop::sample::select(vec!["a", "b", "c"]).prop_map(|s| Expr::Var(s.to_string())),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                (
                    prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]),
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| Expr::group(Expr::binary(op, l, r))),
                inner.prop_map(Expr::group),
            ]
        })
    }

    // Independent recursive oracle: evaluate straight from the tree shape.
    fn oracle(e: &Expr, a: f64, b: f64, c: f64) -> Option<f64> {
        match e {
            Expr::Num(v) => Some(*v),
            Expr::Var(n) => Some(match n.as_str() {
                "a" => a,
                "b" => b,
                _ => c,
            }),
            Expr::Group(i) => oracle(i, a, b, c),
            Expr::Binary { op, lhs, rhs } => {
                let (l, r) = (oracle(lhs, a, b, c)?, oracle(rhs, a, b, c)?);
                match op {
                    BinOp::Add => Some(l + r),
                    BinOp::Sub => Some(l - r),
                    BinOp::Mul => Some(l * r),
                    BinOp::Div if r == 0.0 => None,
                    BinOp::Div => Some(l / r),
                }
            }
        }
    }

    proptest! {
        #[test]
        fn compositional_against_oracle(e in arb_expr(), a in 0.0f64..1.0, bb in 0.0f64..1.0, c in 0.0f64..1.0) {
            let bind = b(&[("a", a), ("b", bb), ("c", c)]);
            let got = e.eval(&bind).ok();
            let want = oracle(&e, a, bb, c);
            match (got, want) {
                (Some(g), Some(w)) => prop_assert!(g == w || (g.is_nan() && w.is_nan())),
                (None, None) => {}
                (g, w) => prop_assert!(false, "mismatch {g:?} vs {w:?}"),
            }
        }

        #[test]
        fn serialize_round_trip(e in arb_expr(), a in 0.0f64..1.0, bb in 0.0f64..1.0, c in 0.0f64..1.0) {
            let f = ParametricFormula::from_expr(e);
            let back = parse_formula(&f.to_string()).unwrap();
            prop_assert_eq!(&back, &f);
            let bind = b(&[("a", a), ("b", bb), ("c", c)]);
            let (x, y) = (f.evaluate(&bind).ok(), back.evaluate(&bind).ok());
            prop_assert!(x == y || (x.unwrap().is_nan() && y.unwrap().is_nan()));
        }

        #[test]
        fn monotone_for_sums_and_products(
            ops in prop::collection::vec((prop::bool::ANY, 0.0f64..2.0), 1..6),
            a in 0.0f64..0.99, bb in 0.0f64..0.99,
        ) {
            // Build a {+, *} chain with non-negative literals over a and b.
            let mut e = Expr::Var("a".into());
            for (i, (mul, k)) in ops.iter().enumerate() {
                let leaf = if i % 2 == 0 { Expr::Var("b".into()) } else { Expr::Num(*k) };
                let op = if *mul { BinOp::Mul } else { BinOp::Add };
                e = Expr::group(Expr::binary(op, e, leaf));
            }
            let f = ParametricFormula::from_expr(e);
            let h = 1e-3;
            let base = f.evaluate(&b(&[("a", a), ("b", bb)])).unwrap();
            prop_assert!(f.evaluate(&b(&[("a", a + h), ("b", bb)])).unwrap() >= base);
            prop_assert!(f.evaluate(&b(&[("a", a), ("b", bb + h)])).unwrap() >= base);
        }
    }
}
