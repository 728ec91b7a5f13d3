//! Coefficients given as expression strings.
//!
//! Variables: `x`, `y`, `m1` (mean of μ) and `m2` (second moment of μ);
//! control components read `t`, `x` and `y`.
//! Functions use the `math::` namespace, e.g. `math::tanh(x)`. Write real
//! literals with a decimal point: `1/2` is integer division.

use super::{Coefficient, Dependence, Measure};
use crate::error::{Error, Result};
use evalexpr::{Context, EvalexprError, EvalexprResult, Node, Value};

struct Vars {
    names: [&'static str; 4],
    vals: [Value; 4],
}

const COEF_VARS: [&str; 4] = ["x", "y", "m1", "m2"];
const CONTROL_VARS: [&str; 4] = ["t", "x", "y", ""];

impl Context for Vars {
    fn get_value(&self, identifier: &str) -> Option<&Value> {
        self.names.iter().position(|n| !n.is_empty() && *n == identifier).map(|i| &self.vals[i])
    }

    fn call_function(&self, identifier: &str, _argument: &Value) -> EvalexprResult<Value> {
        Err(EvalexprError::FunctionIdentifierNotFound(identifier.to_string()))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(&mut self, _disabled: bool) -> EvalexprResult<()> {
        Err(EvalexprError::ContextNotMutable)
    }
}

pub(crate) fn parse_coefficient(name: &str, src: &str) -> Result<Coefficient> {
    let node: Node = evalexpr::build_operator_tree(src)
        .map_err(|e| Error::Config(format!("coefficient {name}: {e}")))?;
    let mut dep = Dependence::NONE;
    for v in node.iter_variable_identifiers() {
        match v {
            "x" => dep.x = true,
            "y" => dep.y = true,
            "m1" | "m2" => dep.mu = true,
            other => return Err(Error::Config(format!("coefficient {name}: unknown variable `{other}`"))),
        }
    }
    let probe = Vars { names: COEF_VARS, vals: [Value::Float(0.1), Value::Float(0.2), Value::Float(0.3), Value::Float(0.4)] };
    node.eval_number_with_context(&probe)
        .map_err(|e| Error::Config(format!("coefficient {name}: {e}")))?;
    if dep == Dependence::NONE {
        let v = node.eval_number_with_context(&probe).unwrap_or(f64::NAN);
        return Ok(Coefficient::constant(v));
    }
    Ok(Coefficient::new(dep, move |x, y, mu: &Measure| {
        let ctx = Vars {
            names: COEF_VARS,
            vals: [
                Value::Float(x),
                Value::Float(y),
                Value::Float(mu.mean()),
                Value::Float(mu.second_moment()),
            ],
        };
        node.eval_number_with_context(&ctx).unwrap_or(f64::NAN)
    }))
}

pub type ControlComponent = Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Parses one component of a feedback control `h(t, x, y)`.
pub fn parse_control_component(name: &str, src: &str) -> Result<ControlComponent> {
    let node: Node = evalexpr::build_operator_tree(src).map_err(|e| Error::Config(format!("control {name}: {e}")))?;
    for v in node.iter_variable_identifiers() {
        if !CONTROL_VARS.contains(&v) || v.is_empty() {
            return Err(Error::Config(format!("control {name}: unknown variable `{v}`")));
        }
    }
    let probe = Vars { names: CONTROL_VARS, vals: [Value::Float(0.1), Value::Float(0.2), Value::Float(0.3), Value::Float(0.0)] };
    node.eval_number_with_context(&probe).map_err(|e| Error::Config(format!("control {name}: {e}")))?;
    Ok(Box::new(move |t, x, y| {
        let ctx = Vars { names: CONTROL_VARS, vals: [Value::Float(t), Value::Float(x), Value::Float(y), Value::Float(0.0)] };
        node.eval_number_with_context(&ctx).unwrap_or(f64::NAN)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_tracks_dependence() {
        let c = parse_coefficient("c", "-x + 0.5 * m1 + math::sin(y)").unwrap();
        assert_eq!(c.dep, Dependence::new(true, true, true));
        let mu = Measure::empirical(vec![1.0, 3.0]);
        let v = c.eval(1.0, 0.0, &mu);
        assert!((v - 0.0).abs() < 1e-15);
    }

    #[test]
    fn constants_fold() {
        let c = parse_coefficient("s", "2.0").unwrap();
        assert_eq!(c.dep, Dependence::NONE);
        assert!(!c.is_zero());
        assert!(parse_coefficient("z", "0").unwrap().is_zero());
    }

    #[test]
    fn unknown_variable_rejected() {
        assert!(parse_coefficient("b", "z + 1").is_err());
        assert!(parse_coefficient("b", "x +").is_err());
    }

    #[test]
    fn control_components() {
        let h = parse_control_component("h1", "t + x * math::tanh(y)").unwrap();
        assert!((h(0.5, 2.0, 1.0) - (0.5 + 2.0 * 1f64.tanh())).abs() < 1e-15);
        assert!(parse_control_component("h1", "m1").is_err());
        assert!(parse_control_component("h1", "x +").is_err());
    }
}
