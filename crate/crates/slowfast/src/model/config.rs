//! JSON model descriptions.

use super::builtin::{mean_field_ou, no_multiscale, ou_linear_with_kappa, two_scale_langevin, TwoScaleParams};
use super::expr::parse_coefficient;
use super::ModelSpec;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// `{ "example": name }` (with optional `kappa` / `init` overrides) or
/// `{ "coefficients": {b, c, sigma, f, g, tau1, tau2}, "kappa": r, "init": [x0, y0] }`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<[f64; 2]>,
}

impl ModelConfig {
    pub fn example(name: &str) -> Self {
        ModelConfig { example: Some(name.to_string()), ..Default::default() }
    }
}

const COEFFICIENTS: [&str; 7] = ["b", "c", "sigma", "f", "g", "tau1", "tau2"];

pub fn build_model(cfg: &ModelConfig) -> Result<ModelSpec> {
    if let Some(k) = cfg.kappa {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Config(format!("kappa must be positive, got {k}")));
        }
    }
    let mut model = match (&cfg.example, &cfg.coefficients) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either `example` or `coefficients`, not both".into()))
        }
        (None, None) => return Err(Error::Config("missing `example` or `coefficients`".into())),
        (Some(name), None) => match name.as_str() {
            "ou_linear" => ou_linear_with_kappa(cfg.kappa.unwrap_or(1.0)),
            "two_scale_langevin" => {
                let mut p = TwoScaleParams::default();
                if let Some(k) = cfg.kappa {
                    p.kappa = k;
                }
                two_scale_langevin(p)
            }
            "no_multiscale" => no_multiscale(),
            "mean_field_ou" => {
                if cfg.kappa.is_some() {
                    return Err(Error::Config("mean_field_ou has fixed kappa".into()));
                }
                mean_field_ou()
            }
            other => return Err(Error::Config(format!("unknown example `{other}`"))),
        },
        (None, Some(coefs)) => {
            for k in coefs.keys() {
                if !COEFFICIENTS.contains(&k.as_str()) {
                    return Err(Error::Config(format!("unknown coefficient `{k}`")));
                }
            }
            let get = |k: &str| {
                coefs
                    .get(k)
                    .ok_or_else(|| Error::Config(format!("missing coefficient `{k}`")))
                    .and_then(|s| parse_coefficient(k, s))
            };
            let kappa = cfg.kappa.ok_or_else(|| Error::Config("missing `kappa`".into()))?;
            let (b, c, sigma, f, g, tau1, tau2) =
                (get("b")?, get("c")?, get("sigma")?, get("f")?, get("g")?, get("tau1")?, get("tau2")?);
            let degenerate = [&b, &f, &g, &tau1, &tau2].iter().all(|c| c.is_zero());
            ModelSpec {
                name: cfg.name.clone().unwrap_or_else(|| "custom".into()),
                b,
                c,
                sigma,
                f,
                g,
                tau1,
                tau2,
                kappa,
                eta_x: 0.0,
                eta_y: 0.0,
                degenerate,
                averaged_lfd: None,
                cell_x_derivatives: None,
            }
        }
    };
    if let Some([x0, y0]) = cfg.init {
        model.eta_x = x0;
        model.eta_y = y0;
    }
    if let Some(n) = &cfg.name {
        model.name = n.clone();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Measure;

    #[test]
    fn builtins_by_name() {
        for n in super::super::BUILTIN_NAMES {
            let m = build_model(&ModelConfig::example(n)).unwrap();
            assert_eq!(m.name, n);
        }
    }

    #[test]
    fn errors() {
        assert!(build_model(&ModelConfig::example("nope")).is_err());
        let mut c = ModelConfig::example("ou_linear");
        c.kappa = Some(0.0);
        assert!(build_model(&c).is_err());
        let json = r#"{"coefficients": {"b": "y", "c": "0", "sigma": "1.0", "f": "-y", "g": "0", "tau1": "0"}, "kappa": 1.0}"#;
        let c: ModelConfig = serde_json::from_str(json).unwrap();
        let e = build_model(&c).unwrap_err();
        assert!(e.to_string().contains("tau2"));
    }

    #[test]
    fn custom_model_from_json() {
        let json = r#"{"coefficients": {"b": "y", "c": "0", "sigma": "1.0", "f": "-2.0*y", "g": "0",
                      "tau1": "0", "tau2": "math::sqrt(2.0)"}, "kappa": 2.0, "init": [0.1, 0.2]}"#;
        let c: ModelConfig = serde_json::from_str(json).unwrap();
        let m = build_model(&c).unwrap();
        let mu = Measure::point_mass(0.0);
        assert!((m.a(0.0, 3.0, &mu) - 1.0).abs() < 1e-15);
        assert_eq!(m.eta(0.0, 3.0, &mu), 0.0);
        assert_eq!((m.eta_x, m.eta_y), (0.1, 0.2));
        assert!(!m.degenerate);
    }
}
