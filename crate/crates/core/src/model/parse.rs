//! Text format for composite models.
//!
//! ```text
//! WN(sigma2=3) + AR1(rho=0.99, nu2=0.1) + AR1(rho=0.6, nu2=2)
//! RW(gamma2) + ARMA(2,1)
//! ARMA(ar=[0.5, -0.1], ma=[0.3], nu2=1) + QN(q2=0.01) + DR(omega=0.2)
//! ```
//!
//! Parameter values are optional; a bare name or an omitted argument leaves the
//! value unset. `AR(p)` and `MA(q)` are shorthands for `ARMA(p,0)` and `ARMA(0,q)`.

use super::{Component, ModelSpec};
use crate::error::{Error, Result};

/// A parsed model with whatever parameter values the text supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedModel {
    pub spec: ModelSpec,
    /// One entry per parameter slot, in `theta` order.
    pub values: Vec<Option<f64>>,
}

impl ParsedModel {
    /// The full parameter vector, if every value was given.
    pub fn theta(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    pub fn is_fully_specified(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

pub fn parse_model(text: &str) -> Result<ParsedModel> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
    };
    let mut components = Vec::new();
    let mut values = Vec::new();
    loop {
        p.skip_ws();
        let (c, v) = p.term()?;
        components.push(c);
        values.extend(v);
        p.skip_ws();
        match p.peek() {
            None => break,
            Some('+') => p.pos += 1,
            Some(ch) => return Err(p.err(format!("expected '+' or end of input, found '{ch}'"))),
        }
    }
    Ok(ParsedModel {
        spec: ModelSpec::new(components)?,
        values,
    })
}

enum Value {
    None,
    Number(f64),
    List(Vec<f64>),
}

struct Arg {
    column: usize,
    key: Option<String>,
    int: Option<usize>,
    value: Value,
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn err(&self, message: String) -> Error {
        Error::Parse {
            column: self.pos + 1,
            message,
        }
    }

    fn err_at(column: usize, message: String) -> Error {
        Error::Parse { column, message }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a name".into()));
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.peek(), Some('+' | '-')) {
            self.pos += 1;
        }
        while let Some(c) = self.peek() {
            let after_exp = self.pos > start && matches!(self.chars[self.pos - 1], 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || (after_exp && (c == '+' || c == '-')) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        let v: f64 = s
            .parse()
            .map_err(|_| Self::err_at(start + 1, format!("invalid number '{s}'")))?;
        if !v.is_finite() {
            return Err(Self::err_at(start + 1, format!("non-finite number '{s}'")));
        }
        Ok(v)
    }

    fn arg(&mut self) -> Result<Arg> {
        self.skip_ws();
        let column = self.pos + 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            let v = self.number()?;
            if v.fract() != 0.0 || v < 0.0 {
                return Err(Self::err_at(column, "order must be a non-negative integer".into()));
            }
            return Ok(Arg {
                column,
                key: None,
                int: Some(v as usize),
                value: Value::None,
            });
        }
        let key = self.ident()?.to_ascii_lowercase();
        self.skip_ws();
        let value = if self.peek() == Some('=') {
            self.pos += 1;
            self.skip_ws();
            if self.peek() == Some('[') {
                self.pos += 1;
                let mut list = Vec::new();
                self.skip_ws();
                if self.peek() == Some(']') {
                    self.pos += 1;
                } else {
                    loop {
                        list.push(self.number()?);
                        self.skip_ws();
                        match self.peek() {
                            Some(',') => self.pos += 1,
                            Some(']') => {
                                self.pos += 1;
                                break;
                            }
                            _ => return Err(self.err("expected ',' or ']'".into())),
                        }
                    }
                }
                Value::List(list)
            } else {
                Value::Number(self.number()?)
            }
        } else {
            Value::None
        };
        Ok(Arg {
            column,
            key: Some(key),
            int: None,
            value,
        })
    }

    fn args(&mut self) -> Result<Vec<Arg>> {
        self.skip_ws();
        if self.peek() != Some('(') {
            return Ok(Vec::new());
        }
        self.pos += 1;
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.arg()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(')') => {
                    self.pos += 1;
                    return Ok(args);
                }
                _ => return Err(self.err("expected ',' or ')'".into())),
            }
        }
    }

    fn term(&mut self) -> Result<(Component, Vec<Option<f64>>)> {
        self.skip_ws();
        let column = self.pos + 1;
        let name = self.ident()?.to_ascii_uppercase();
        let args = self.args()?;
        match name.as_str() {
            "WN" => scalar(Component::WhiteNoise, &["sigma2", "s2", "variance"], args),
            "QN" => scalar(Component::Quantization, &["q2"], args),
            "RW" => scalar(Component::RandomWalk, &["gamma2"], args),
            "DR" => scalar(Component::Drift, &["omega", "slope"], args),
            "AR1" => ar1(args),
            "ARMA" => arma(args, None),
            "AR" => arma(args, Some(false)),
            "MA" => arma(args, Some(true)),
            _ => Err(Self::err_at(
                column,
                format!("unknown component '{name}' (expected WN, QN, RW, DR, AR1, ARMA, AR or MA)"),
            )),
        }
    }
}

fn number_of(arg: &Arg) -> Result<Option<f64>> {
    match &arg.value {
        Value::None => Ok(None),
        Value::Number(v) => Ok(Some(*v)),
        Value::List(_) => Err(Parser::err_at(arg.column, "expected a number, found a list".into())),
    }
}

fn unknown(arg: &Arg) -> Error {
    let what = match (&arg.key, arg.int) {
        (Some(k), _) => format!("unexpected parameter '{k}'"),
        (None, Some(i)) => format!("unexpected order {i}"),
        _ => "unexpected argument".into(),
    };
    Parser::err_at(arg.column, what)
}

fn set(slot: &mut Option<f64>, arg: &Arg) -> Result<()> {
    if slot.is_some() {
        return Err(Parser::err_at(arg.column, "parameter given twice".into()));
    }
    *slot = number_of(arg)?;
    Ok(())
}

fn scalar(c: Component, names: &[&str], args: Vec<Arg>) -> Result<(Component, Vec<Option<f64>>)> {
    let mut value = None;
    let mut seen = false;
    for a in &args {
        match &a.key {
            Some(k) if names.contains(&k.as_str()) && !seen => {
                seen = true;
                set(&mut value, a)?;
            }
            _ => return Err(unknown(a)),
        }
    }
    Ok((c, vec![value]))
}

fn ar1(args: Vec<Arg>) -> Result<(Component, Vec<Option<f64>>)> {
    let mut rho = None;
    let mut nu2 = None;
    for a in &args {
        match a.key.as_deref() {
            Some("rho" | "phi") => set(&mut rho, a)?,
            Some("nu2" | "sigma2" | "upsilon2") => set(&mut nu2, a)?,
            _ => return Err(unknown(a)),
        }
    }
    Ok((Component::Ar1, vec![rho, nu2]))
}

/// `only_ma`: `None` for ARMA, `Some(false)` for AR, `Some(true)` for MA.
fn arma(args: Vec<Arg>, only_ma: Option<bool>) -> Result<(Component, Vec<Option<f64>>)> {
    let mut orders = Vec::new();
    let mut ar: Option<Vec<f64>> = None;
    let mut ma: Option<Vec<f64>> = None;
    let mut nu2 = None;
    for a in &args {
        if let Some(i) = a.int {
            orders.push((i, a.column));
            continue;
        }
        let list = |slot: &mut Option<Vec<f64>>| -> Result<()> {
            if slot.is_some() {
                return Err(Parser::err_at(a.column, "parameter given twice".into()));
            }
            *slot = Some(match &a.value {
                Value::List(v) => v.clone(),
                Value::Number(v) => vec![*v],
                Value::None => return Err(Parser::err_at(a.column, "coefficient list needs values".into())),
            });
            Ok(())
        };
        match a.key.as_deref() {
            Some("ar") if only_ma != Some(true) => list(&mut ar)?,
            Some("ma") if only_ma != Some(false) => list(&mut ma)?,
            Some("nu2" | "sigma2" | "upsilon2") => set(&mut nu2, a)?,
            _ => return Err(unknown(a)),
        }
    }
    let expected_orders = if only_ma.is_some() { 1 } else { 2 };
    if !orders.is_empty() && orders.len() != expected_orders {
        return Err(Parser::err_at(
            orders[0].1,
            format!("expected {expected_orders} order argument(s), found {}", orders.len()),
        ));
    }
    let (p_given, q_given) = match (only_ma, orders.as_slice()) {
        (_, []) => (None, None),
        (None, [(p, _), (q, _)]) => (Some(*p), Some(*q)),
        (Some(false), [(p, _)]) => (Some(*p), Some(0)),
        (Some(true), [(q, _)]) => (Some(0), Some(*q)),
        _ => unreachable!(),
    };
    let resolve = |given: Option<usize>, list: &Option<Vec<f64>>, what: &str| -> Result<usize> {
        match (given, list) {
            (Some(n), Some(v)) if n != v.len() => Err(Parser::err_at(
                args.first().map_or(1, |a| a.column),
                format!("{what} order {n} does not match {} coefficients", v.len()),
            )),
            (Some(n), _) => Ok(n),
            (None, Some(v)) => Ok(v.len()),
            (None, None) => Ok(0),
        }
    };
    let p = if only_ma == Some(true) { 0 } else { resolve(p_given, &ar, "AR")? };
    let q = if only_ma == Some(false) { 0 } else { resolve(q_given, &ma, "MA")? };
    if p + q == 0 && only_ma.is_some() {
        return Err(Parser::err_at(1, "AR/MA component needs a positive order".into()));
    }
    let mut values: Vec<Option<f64>> = Vec::with_capacity(p + q + 1);
    match ar {
        Some(v) => values.extend(v.into_iter().map(Some)),
        None => values.extend(std::iter::repeat(None).take(p)),
    }
    match ma {
        Some(v) => values.extend(v.into_iter().map(Some)),
        None => values.extend(std::iter::repeat(None).take(q)),
    }
    values.push(nu2);
    Ok((Component::Arma { p, q }, values))
}
