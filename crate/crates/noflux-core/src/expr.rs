//! Scalar coefficient expressions: recursive-descent parser and evaluator.
//!
//! The grammar supports `+ - * / ^` with standard precedence (`^` binds
//! tightest and is right-associative), unary minus, parentheses, the
//! built-in constant `pi`, the functions `sin cos exp abs sqrt tanh min max
//! pow`, and a fixed variable set: `x`, `y` (space), `s` (solution value),
//! `p1`, `p2` (gradient components), `t` (1D axis alias). Expressions are
//! immutable after parsing and evaluation is pure, so they can be shared
//! and evaluated concurrently.

use std::fmt;
use thiserror::Error;

/// The closed set of variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    S,
    P1,
    P2,
    T,
}

impl Var {
    pub const ALL: [Var; 6] = [Var::X, Var::Y, Var::S, Var::P1, Var::P2, Var::T];

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::S => "s",
            Var::P1 => "p1",
            Var::P2 => "p2",
            Var::T => "t",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        Var::ALL.iter().copied().find(|v| v.name() == name)
    }

    fn slot(self) -> usize {
        match self {
            Var::X => 0,
            Var::Y => 1,
            Var::S => 2,
            Var::P1 => 3,
            Var::P2 => 4,
            Var::T => 5,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Set of variables occurring in an expression, packed into a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VarSet(u8);

impl VarSet {
    pub fn contains(self, v: Var) -> bool {
        self.0 & (1 << v.slot()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Var> {
        Var::ALL.into_iter().filter(move |v| self.contains(*v))
    }

    fn insert(&mut self, v: Var) {
        self.0 |= 1 << v.slot();
    }
}

/// Values bound to variables for one evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings {
    slots: [Option<f64>; 6],
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: Var, value: f64) -> &mut Self {
        self.slots[var.slot()] = Some(value);
        self
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.slots[var.slot()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Tanh,
    Min,
    Max,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed, immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    source: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` expects {expected} argument(s), got {got} at offset {offset}")]
    Arity {
        name: &'static str,
        expected: usize,
        got: usize,
        offset: usize,
    },
    #[error("variable `{0}` is not bound")]
    Unbound(Var),
}

/// Parses `source` into an expression, honoring operator precedence.
pub fn parse(source: &str) -> Result<Expression, ExprError> {
    let mut parser = Parser {
        src: source.as_bytes(),
        pos: 0,
    };
    parser.skip_ws();
    if parser.at_end() {
        return Err(ExprError::Syntax {
            offset: parser.pos,
            message: "empty expression".into(),
        });
    }
    let root = parser.parse_expr()?;
    parser.skip_ws();
    if !parser.at_end() {
        return Err(ExprError::Syntax {
            offset: parser.pos,
            message: "unexpected trailing input".into(),
        });
    }
    Ok(Expression {
        root,
        source: source.to_owned(),
    })
}

impl Expression {
    /// Evaluates the tree in IEEE double precision. Domain errors (e.g.
    /// `sqrt` of a negative) yield NaN rather than trapping; only missing
    /// bindings are reported as errors.
    pub fn eval(&self, bindings: &Bindings) -> Result<f64, ExprError> {
        eval_node(&self.root, bindings)
    }

    /// Variables occurring anywhere in the tree.
    pub fn variables(&self) -> VarSet {
        let mut set = VarSet::default();
        collect_vars(&self.root, &mut set);
        set
    }

    /// The original text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Canonical fully parenthesized form; reparsing it yields a tree with
    /// identical evaluation.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        write_node(&self.root, &mut out);
        out
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

fn eval_node(node: &Node, b: &Bindings) -> Result<f64, ExprError> {
    Ok(match node {
        Node::Num(v) => *v,
        Node::Var(var) => b.get(*var).ok_or(ExprError::Unbound(*var))?,
        Node::Neg(e) => -eval_node(e, b)?,
        Node::Bin(op, l, r) => {
            let l = eval_node(l, b)?;
            let r = eval_node(r, b)?;
            match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => l / r,
                BinOp::Pow => l.powf(r),
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], b)?;
            match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Abs => a.abs(),
                Func::Sqrt => a.sqrt(),
                Func::Tanh => a.tanh(),
                Func::Min => a.min(eval_node(&args[1], b)?),
                Func::Max => a.max(eval_node(&args[1], b)?),
                Func::Pow => a.powf(eval_node(&args[1], b)?),
            }
        }
    })
}

fn collect_vars(node: &Node, set: &mut VarSet) {
    match node {
        Node::Num(_) => {}
        Node::Var(v) => set.insert(*v),
        Node::Neg(e) => collect_vars(e, set),
        Node::Bin(_, l, r) => {
            collect_vars(l, set);
            collect_vars(r, set);
        }
        Node::Call(_, args) => args.iter().for_each(|a| collect_vars(a, set)),
    }
}

fn write_node(node: &Node, out: &mut String) {
    use std::fmt::Write;
    match node {
        Node::Num(v) => {
            let _ = write!(out, "{v:?}");
        }
        Node::Var(v) => out.push_str(v.name()),
        Node::Neg(e) => {
            out.push_str("(-");
            write_node(e, out);
            out.push(')');
        }
        Node::Bin(op, l, r) => {
            out.push('(');
            write_node(l, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_node(r, out);
            out.push(')');
        }
        Node::Call(func, args) => {
            out.push_str(func.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_node(a, out);
            }
            out.push(')');
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn syntax(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    // expr := term (('+'|'-') term)*
    fn parse_expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.parse_term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.parse_term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // term := unary (('*'|'/') unary)*
    fn parse_term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // unary := '-' unary | power   (so -x^2 parses as -(x^2))
    fn parse_unary(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.parse_unary()?)))
        } else {
            self.parse_power()
        }
    }

    // power := atom ('^' unary)?   (right-associative via recursion)
    fn parse_power(&mut self) -> Result<Node, ExprError> {
        let base = self.parse_atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            let exponent = self.parse_unary()?;
            Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn parse_atom(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.parse_ident(),
            _ => Err(self.syntax("expected an operand")),
        }
    }

    fn parse_number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.eat(b'.') {
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                return Err(self.syntax("expected digits in exponent"));
            }
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("invalid number literal `{text}`"),
        })?;
        Ok(Node::Num(value))
    }

    fn parse_ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .to_owned();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let func = Func::from_name(&name).ok_or(ExprError::UnknownIdentifier {
                name: name.clone(),
                offset: start,
            })?;
            self.pos += 1;
            let mut args = Vec::new();
            self.skip_ws();
            if !self.eat(b')') {
                loop {
                    args.push(self.parse_expr()?);
                    self.skip_ws();
                    if self.eat(b',') {
                        continue;
                    }
                    if self.eat(b')') {
                        break;
                    }
                    return Err(self.syntax("expected `,` or `)` in argument list"));
                }
            }
            if args.len() != func.arity() {
                return Err(ExprError::Arity {
                    name: func.name(),
                    expected: func.arity(),
                    got: args.len(),
                    offset: start,
                });
            }
            Ok(Node::Call(func, args))
        } else if name == "pi" {
            Ok(Node::Num(std::f64::consts::PI))
        } else {
            Var::from_name(&name)
                .map(Node::Var)
                .ok_or(ExprError::UnknownIdentifier { name, offset: start })
        }
    }
}
