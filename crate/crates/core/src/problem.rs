//! JSON problem files.
//!
//! ```json
//! {"n": 2,
//!  "f": [{"c": 1.0, "e": [2, 0]}],
//!  "set": {"eq": [], "ineq": [], "archimedean": false, "closed_at_infinity": false},
//!  "gmp": {"a": [[{"c": 1.0, "e": [0, 0]}]], "b": [1.0], "m1": 1, "d": 2}}
//! ```
//!
//! Without the `gmp` key the file describes a polynomial optimization
//! problem. Every schema violation found is reported, not only the first.

use serde_json::Value;
use thiserror::Error;

use crate::poly::Polynomial;
use crate::relax::{GmpProblem, PopProblem, Problem, SemialgebraicSet};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("JSON syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("problem file violates the schema:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),
}

struct Collector {
    errors: Vec<String>,
}

impl Collector {
    fn push(&mut self, path: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn poly(&mut self, path: &str, v: Option<&Value>, n: usize) -> Option<Polynomial> {
        match v {
            None => {
                self.push(path, "missing");
                None
            }
            Some(v) if !v.is_array() => {
                self.push(path, "expected an array of {\"c\", \"e\"} terms");
                None
            }
            Some(v) => match Polynomial::from_json_terms(n, v) {
                Ok(p) => Some(p),
                Err(e) => {
                    self.push(path, e);
                    None
                }
            },
        }
    }

    fn poly_list(&mut self, path: &str, v: Option<&Value>, n: usize) -> Vec<Polynomial> {
        match v {
            None => vec![],
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .filter_map(|(i, item)| self.poly(&format!("{path}[{i}]"), Some(item), n))
                .collect(),
            Some(_) => {
                self.push(path, "expected an array of polynomials");
                vec![]
            }
        }
    }

    fn flag(&mut self, path: &str, v: Option<&Value>) -> bool {
        match v {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                self.push(path, "expected a boolean");
                false
            }
        }
    }

    fn uint(&mut self, path: &str, v: Option<&Value>) -> Option<u64> {
        match v.map(Value::as_u64) {
            Some(Some(x)) => Some(x),
            Some(None) => {
                self.push(path, "expected a nonnegative integer");
                None
            }
            None => {
                self.push(path, "missing");
                None
            }
        }
    }
}

const TOP_KEYS: [&str; 4] = ["n", "f", "set", "gmp"];

/// Parses and validates a problem description.
pub fn parse_problem_str(text: &str) -> Result<Problem, ProblemError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ProblemError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let mut c = Collector { errors: vec![] };
    let Some(obj) = root.as_object() else {
        return Err(ProblemError::Schema(vec!["(root): expected an object".into()]));
    };
    for key in obj.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            c.push(key, "unknown key");
        }
    }
    let n = match c.uint("n", obj.get("n")) {
        Some(0) => {
            c.push("n", "must be at least 1");
            return Err(ProblemError::Schema(c.errors));
        }
        Some(n) => n as usize,
        None => return Err(ProblemError::Schema(c.errors)),
    };
    let f = c.poly("f", obj.get("f"), n);

    let set = match obj.get("set") {
        None => SemialgebraicSet::whole_space(n),
        Some(Value::Object(s)) => {
            for key in s.keys() {
                if !["eq", "ineq", "archimedean", "closed_at_infinity"].contains(&key.as_str()) {
                    c.push(&format!("set.{key}"), "unknown key");
                }
            }
            SemialgebraicSet {
                nvars: n,
                eq: c.poly_list("set.eq", s.get("eq"), n),
                ineq: c.poly_list("set.ineq", s.get("ineq"), n),
                archimedean: c.flag("set.archimedean", s.get("archimedean")),
                closed_at_infinity: c.flag("set.closed_at_infinity", s.get("closed_at_infinity")),
            }
        }
        Some(_) => {
            c.push("set", "expected an object");
            SemialgebraicSet::whole_space(n)
        }
    };
    for (kind, list) in [("eq", &set.eq), ("ineq", &set.ineq)] {
        for (j, p) in list.iter().enumerate() {
            if p.is_zero() {
                c.push(&format!("set.{kind}[{j}]"), "constraint is the zero polynomial");
            }
        }
    }

    let problem = match obj.get("gmp") {
        None => f.map(|f| Problem::Pop(PopProblem { set, f })),
        Some(Value::Object(g)) => {
            for key in g.keys() {
                if !["a", "b", "m1", "d"].contains(&key.as_str()) {
                    c.push(&format!("gmp.{key}"), "unknown key");
                }
            }
            let a = match g.get("a") {
                Some(Value::Array(_)) => c.poly_list("gmp.a", g.get("a"), n),
                _ => {
                    c.push("gmp.a", "expected an array of polynomials");
                    vec![]
                }
            };
            let b: Vec<f64> = match g.get("b") {
                Some(Value::Array(items)) => items
                    .iter()
                    .enumerate()
                    .filter_map(|(i, v)| match v.as_f64() {
                        Some(x) => Some(x),
                        None => {
                            c.push(&format!("gmp.b[{i}]"), "expected a number");
                            None
                        }
                    })
                    .collect(),
                _ => {
                    c.push("gmp.b", "expected an array of numbers");
                    vec![]
                }
            };
            let m1 = c.uint("gmp.m1", g.get("m1")).unwrap_or(0) as usize;
            let d_given = c.uint("gmp.d", g.get("d"));
            if a.len() != b.len() {
                c.push("gmp.b", format!("has {} entries but gmp.a has {}", b.len(), a.len()));
            }
            if m1 > a.len() {
                c.push("gmp.m1", format!("{m1} exceeds the number of pairings {}", a.len()));
            }
            match (f, d_given) {
                (Some(f), Some(d)) => {
                    let d = d as u32;
                    let top = a.iter().map(Polynomial::degree).chain([f.degree()]).max().unwrap_or(0);
                    if top > d {
                        c.push("gmp.d", format!("{d} is below the data degree {top}"));
                    }
                    Some(Problem::Gmp(GmpProblem { set, f, a, b, m1, d }))
                }
                _ => None,
            }
        }
        Some(_) => {
            c.push("gmp", "expected an object");
            None
        }
    };
    match problem {
        Some(p) if c.errors.is_empty() => Ok(p),
        _ => Err(ProblemError::Schema(c.errors)),
    }
}
