//! Arithmetic expression language for user-supplied coefficient functions.
//!
//! Expressions are parsed against a [`Schema`] (the ordered list of variable
//! names a coefficient may reference) and evaluated against a slice of slot
//! values. The grammar is ordinary precedence-climbing arithmetic:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `min`, `max` (two or more arguments), `abs`, `exp`, `log`,
//! `sqrt` (one argument), `pow` (two arguments). There are no conditionals.
//! Division is accepted, but a coefficient with a pole is not Lipschitz and
//! the solvers' stability bounds assume it is.

mod parse;

use std::fmt;

use thiserror::Error;

pub use parse::{parse, parse_with_depth, DEFAULT_MAX_DEPTH};

/// Errors raised while parsing or evaluating an expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: expected one of {expected:?}, found {found}")]
    Syntax {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown variable `{name}` at offset {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` at offset {offset} takes {expected} argument(s), got {got}")]
    Arity {
        name: String,
        offset: usize,
        expected: String,
        got: usize,
    },
    #[error("expression nesting exceeds depth limit {limit}")]
    DepthExceeded { limit: usize },
    #[error("empty expression")]
    Empty,
    #[error("variable `{name}` is not bound")]
    Unbound { name: String },
    #[error("numeric domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },
}

/// Ordered variable names an expression may reference, plus aliases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schema {
    names: Vec<String>,
    aliases: Vec<(String, usize)>,
}

impl Schema {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Schema {
            names: names.into_iter().map(Into::into).collect(),
            aliases: Vec::new(),
        }
    }

    /// Adds `alias` as a second name for the slot of `target`.
    pub fn with_alias(mut self, alias: &str, target: &str) -> Self {
        if let Some(slot) = self.slot(target) {
            self.aliases.push((alias.to_string(), slot));
        }
        self
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .or_else(|| self.aliases.iter().find(|(a, _)| a == name).map(|(_, s)| *s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
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
pub enum Func {
    Min,
    Max,
    Abs,
    Exp,
    Log,
    Sqrt,
    Pow,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Pow => "pow",
        }
    }

    /// `(min, max)` accepted argument counts; `None` means unbounded.
    fn arity(self) -> (usize, Option<usize>) {
        match self {
            Func::Min | Func::Max => (2, None),
            Func::Pow => (2, Some(2)),
            _ => (1, Some(1)),
        }
    }
}

/// Expression tree. Variables carry both their slot and their name so the
/// tree can be printed back without the schema.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var { slot: usize, name: String },
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn negate(self) -> Expr {
        Expr::Neg(Box::new(self))
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Height of the tree (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var { .. } => 1,
            Expr::Neg(a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    /// True when the tree references a variable whose name satisfies `pred`.
    pub fn references(&self, pred: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var { name, .. } => pred(name),
            Expr::Neg(a) => a.references(pred),
            Expr::Binary(_, a, b) => a.references(pred) || b.references(pred),
            Expr::Call(_, args) => args.iter().any(|a| a.references(pred)),
        }
    }

    /// Rebuilds the tree with every variable replaced by `f(name)`.
    pub fn rewrite_vars<E>(&self, f: &dyn Fn(&str) -> Result<Expr, E>) -> Result<Expr, E> {
        Ok(match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var { name, .. } => f(name)?,
            Expr::Neg(a) => Expr::Neg(Box::new(a.rewrite_vars(f)?)),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.rewrite_vars(f)?),
                Box::new(b.rewrite_vars(f)?),
            ),
            Expr::Call(func, args) => Expr::Call(
                *func,
                args.iter()
                    .map(|a| a.rewrite_vars(f))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    /// Evaluates against slot values. Any non-finite intermediate result is a
    /// domain error naming the offending subexpression.
    pub fn eval(&self, slots: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var { slot, name } => match slots.get(*slot) {
                Some(v) => *v,
                None => return Err(ExprError::Unbound { name: name.clone() }),
            },
            Expr::Neg(a) => -a.eval(slots)?,
            Expr::Binary(op, a, b) => {
                let x = a.eval(slots)?;
                let y = b.eval(slots)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        x / y
                    }
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call(func, args) => {
                let first = args[0].eval(slots)?;
                match func {
                    Func::Min => {
                        let mut acc = first;
                        for a in &args[1..] {
                            acc = acc.min(a.eval(slots)?);
                        }
                        acc
                    }
                    Func::Max => {
                        let mut acc = first;
                        for a in &args[1..] {
                            acc = acc.max(a.eval(slots)?);
                        }
                        acc
                    }
                    Func::Abs => first.abs(),
                    Func::Exp => first.exp(),
                    Func::Log => {
                        if first <= 0.0 {
                            return Err(self.domain("logarithm of a non-positive value"));
                        }
                        first.ln()
                    }
                    Func::Sqrt => {
                        if first < 0.0 {
                            return Err(self.domain("square root of a negative value"));
                        }
                        first.sqrt()
                    }
                    Func::Pow => first.powf(args[1].eval(slots)?),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain("non-finite result"))
        }
    }

    fn domain(&self, reason: &str) -> ExprError {
        ExprError::Domain {
            subexpr: self.to_string(),
            reason: reason.to_string(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var { name, .. } => f.write_str(name),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Name-to-value bindings for one evaluation.
#[derive(Debug, Clone)]
pub struct EvalContext<'s> {
    schema: &'s Schema,
    values: Vec<Option<f64>>,
}

impl<'s> EvalContext<'s> {
    pub fn new(schema: &'s Schema) -> Self {
        EvalContext {
            schema,
            values: vec![None; schema.len()],
        }
    }

    /// Binds `name`. Non-finite values are rejected.
    pub fn bind(&mut self, name: &str, value: f64) -> Result<&mut Self, ExprError> {
        let slot = self
            .schema
            .slot(name)
            .ok_or_else(|| ExprError::UnknownVariable {
                name: name.to_string(),
                offset: 0,
            })?;
        if !value.is_finite() {
            return Err(ExprError::Domain {
                subexpr: name.to_string(),
                reason: "non-finite binding".into(),
            });
        }
        self.values[slot] = Some(value);
        Ok(self)
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self, ExprError> {
        self.bind(name, value)?;
        Ok(self)
    }
}

/// Evaluates `expr` under `ctx`, failing on any free variable left unbound.
pub fn evaluate(expr: &Expr, ctx: &EvalContext<'_>) -> Result<f64, ExprError> {
    fn check(e: &Expr, ctx: &EvalContext<'_>) -> Result<(), ExprError> {
        match e {
            Expr::Num(_) => Ok(()),
            Expr::Var { slot, name } => match ctx.values.get(*slot) {
                Some(Some(_)) => Ok(()),
                _ => Err(ExprError::Unbound { name: name.clone() }),
            },
            Expr::Neg(a) => check(a, ctx),
            Expr::Binary(_, a, b) => {
                check(a, ctx)?;
                check(b, ctx)
            }
            Expr::Call(_, args) => args.iter().try_for_each(|a| check(a, ctx)),
        }
    }
    check(expr, ctx)?;
    let slots: Vec<f64> = ctx.values.iter().map(|v| v.unwrap_or(0.0)).collect();
    expr.eval(&slots)
}
