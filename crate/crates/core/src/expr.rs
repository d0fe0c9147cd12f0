//! Arithmetic expressions over outcome coordinates `q1..qD` and type
//! coordinates `v1..vd`, used for payoff functions and rules declared in
//! scenario files.

use evalexpr::error::EvalexprResultValue;
use evalexpr::{
    build_operator_tree, Context, DefaultNumericTypes, EvalexprError, EvalexprResult, Node,
    Value,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    Outcome(usize),
    Type(usize),
}

/// A parsed expression. Integer literals are promoted to floats so that
/// `1/2` means one half.
#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    tree: Node<DefaultNumericTypes>,
    vars: Vec<(String, Var)>,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let normalized = promote_integer_literals(source);
        let tree = build_operator_tree::<DefaultNumericTypes>(&normalized)
            .map_err(|e| Error::Expression(format!("`{source}`: {e}")))?;
        let mut vars: Vec<(String, Var)> = Vec::new();
        for name in tree.iter_variable_identifiers() {
            if vars.iter().any(|(n, _)| n == name) {
                continue;
            }
            let var = parse_var(name)
                .ok_or_else(|| Error::Expression(format!("`{source}`: unknown variable `{name}` (use q1.. or v1..)")))?;
            vars.push((name.to_string(), var));
        }
        Ok(Self {
            source: source.to_string(),
            tree,
            vars,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Highest outcome / type coordinate referenced (1-based counts).
    pub fn arity(&self) -> (usize, usize) {
        self.vars.iter().fold((0, 0), |(q, v), (_, var)| match var {
            Var::Outcome(k) => (q.max(k + 1), v),
            Var::Type(k) => (q, v.max(k + 1)),
        })
    }

    pub fn eval(&self, q: &[f64], v: &[f64]) -> Result<f64> {
        let mut values = Vec::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            let x = match *var {
                Var::Outcome(k) => q.get(k),
                Var::Type(k) => v.get(k),
            }
            .ok_or_else(|| Error::Expression(format!("`{}`: `{name}` is out of range", self.source)))?;
            values.push(Value::Float(*x));
        }
        let ctx = Bindings {
            names: &self.vars,
            values,
        };
        let out = self
            .tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Expression(format!("`{}`: {e}", self.source)))?;
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Expression(format!("`{}` evaluated to {out}", self.source)))
        }
    }
}

fn parse_var(name: &str) -> Option<Var> {
    let (head, tail) = name.split_at(1);
    let k: usize = tail.parse().ok()?;
    if k == 0 {
        return None;
    }
    match head {
        "q" => Some(Var::Outcome(k - 1)),
        "v" => Some(Var::Type(k - 1)),
        _ => None,
    }
}

fn promote_integer_literals(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev = if i > 0 { Some(chars[i - 1]) } else { None };
        let starts_number =
            c.is_ascii_digit() && !prev.is_some_and(|p| p.is_alphanumeric() || p == '_' || p == '.');
        if !starts_number {
            out.push(c);
            i += 1;
            continue;
        }
        let start = i;
        let mut is_float = false;
        while i < chars.len() {
            let d = chars[i];
            if d.is_ascii_digit() {
                i += 1;
            } else if d == '.' {
                is_float = true;
                i += 1;
            } else if (d == 'e' || d == 'E') && i + 1 < chars.len() {
                is_float = true;
                i += 1;
                if chars[i] == '+' || chars[i] == '-' {
                    i += 1;
                }
            } else {
                break;
            }
        }
        out.extend(&chars[start..i]);
        if !is_float {
            out.push_str(".0");
        }
    }
    out
}

struct Bindings<'a> {
    names: &'a [(String, Var)],
    values: Vec<Value<DefaultNumericTypes>>,
}

impl Context for Bindings<'_> {
    type NumericTypes = DefaultNumericTypes;

    fn get_value(&self, identifier: &str) -> Option<&Value<DefaultNumericTypes>> {
        self.names
            .iter()
            .position(|(n, _)| n == identifier)
            .map(|k| &self.values[k])
    }

    fn call_function(
        &self,
        identifier: &str,
        _argument: &Value<DefaultNumericTypes>,
    ) -> EvalexprResultValue<DefaultNumericTypes> {
        Err(EvalexprError::FunctionIdentifierNotFound(identifier.to_string()))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(&mut self, disabled: bool) -> EvalexprResult<(), DefaultNumericTypes> {
        if disabled {
            Err(EvalexprError::BuiltinFunctionsCannotBeDisabled)
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_division_is_real() {
        let e = Expr::parse("1/2*v1").unwrap();
        assert_eq!(e.eval(&[], &[3.0]).unwrap(), 1.5);
    }

    #[test]
    fn literals_inside_identifiers_untouched() {
        assert_eq!(promote_integer_literals("q12 + 3 * v2^2"), "q12 + 3.0 * v2^2.0");
        assert_eq!(promote_integer_literals("1e-3 + 2.5"), "1e-3 + 2.5");
    }

    #[test]
    fn dot_product_and_builtins() {
        let e = Expr::parse("q1*v1 + q2*v2 + if(v1 >= 0.4, 1, 0) + min(q1, 0.25)").unwrap();
        assert_eq!(e.arity(), (2, 2));
        let x = e.eval(&[0.5, 1.0], &[0.5, 2.0]).unwrap();
        assert!((x - (0.25 + 2.0 + 1.0 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn unknown_variables_rejected() {
        assert!(Expr::parse("x + v1").is_err());
        assert!(Expr::parse("v0").is_err());
    }

    #[test]
    fn out_of_range_variable_is_an_error() {
        let e = Expr::parse("v2").unwrap();
        assert!(e.eval(&[], &[1.0]).is_err());
    }
}
