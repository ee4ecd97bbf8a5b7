//! Plain-text model files.
//!
//! ```text
//! # relburgers model
//! format = 1
//! smooth_hidden = 16 32 32 32 16
//! ...
//! param_count = 4756
//! params
//! <one parameter per line, declared order>
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips binary64
//! exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{param_count, Activation, InputScaling, ModelSpec, ParamVector, ShockInputs};
use crate::error::{Error, Result};
use crate::physics::RadialDomain;

const HEADER: &str = "# relburgers model";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub spec: ModelSpec,
    pub seed: u64,
    pub params: ParamVector,
}

fn sizes(v: &[usize]) -> String {
    v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_model(model: &StoredModel) -> String {
    let s = &model.spec;
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "format = {FORMAT}");
    let _ = writeln!(out, "smooth_hidden = {}", sizes(&s.smooth_hidden));
    let _ = writeln!(out, "locator_hidden = {}", sizes(&s.locator_hidden));
    let _ = writeln!(out, "shock_feature_hidden = {}", sizes(&s.shock_feature_hidden));
    let _ = writeln!(out, "shock_inputs = {}", s.shock_inputs.name());
    let _ = writeln!(out, "activation = {}", s.activation.name());
    for (k, v) in [
        ("r_min", s.domain.r_min),
        ("r_max", s.domain.r_max),
        ("epsilon", s.domain.epsilon),
        ("t_center", s.scaling.t_center),
        ("t_half_width", s.scaling.t_half_width),
        ("r_center", s.scaling.r_center),
        ("r_half_width", s.scaling.r_half_width),
    ] {
        let _ = writeln!(out, "{k} = {v:.16e}");
    }
    let _ = writeln!(out, "seed = {}", model.seed);
    let _ = writeln!(out, "param_count = {}", model.params.len());
    let _ = writeln!(out, "params");
    for p in &model.params.0 {
        let _ = writeln!(out, "{p:.16e}");
    }
    out
}

pub fn parse_model(text: &str) -> Result<StoredModel> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(Error::Parse("missing model header".into()));
    }
    let mut fields = HashMap::new();
    for line in lines.by_ref() {
        let line = line.trim();
        if line == "params" {
            break;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected 'key = value', got '{line}'")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| Error::Parse(format!("missing field '{k}'")));
    let float = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|e| Error::Parse(format!("field '{k}': {e}")))
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split_whitespace()
            .map(|x| x.parse().map_err(|e| Error::Parse(format!("field '{k}': {e}"))))
            .collect()
    };
    let format: u32 = get("format")?.parse().map_err(|e| Error::Parse(format!("format: {e}")))?;
    if format != FORMAT {
        return Err(Error::Parse(format!("unsupported model format {format}")));
    }
    let spec = ModelSpec {
        smooth_hidden: list("smooth_hidden")?,
        locator_hidden: list("locator_hidden")?,
        shock_feature_hidden: list("shock_feature_hidden")?,
        shock_inputs: match fields.get("shock_inputs") {
            Some(v) => ShockInputs::parse(v)?,
            None => ShockInputs::default(),
        },
        activation: Activation::parse(get("activation")?)?,
        domain: RadialDomain { r_min: float("r_min")?, r_max: float("r_max")?, epsilon: float("epsilon")? },
        scaling: InputScaling {
            t_center: float("t_center")?,
            t_half_width: float("t_half_width")?,
            r_center: float("r_center")?,
            r_half_width: float("r_half_width")?,
        },
    };
    spec.validate()?;
    let seed = get("seed")?.parse().map_err(|e| Error::Parse(format!("seed: {e}")))?;
    let count: usize = get("param_count")?.parse().map_err(|e| Error::Parse(format!("param_count: {e}")))?;
    let params: Vec<f64> = lines
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|e| Error::Parse(format!("parameter '{l}': {e}"))))
        .collect::<Result<_>>()?;
    if params.len() != count || count != param_count(&spec) {
        return Err(Error::Parse(format!(
            "expected {} parameters (declared {count}), found {}",
            param_count(&spec),
            params.len()
        )));
    }
    Ok(StoredModel { spec, seed, params: ParamVector(params) })
}

pub fn save_model(path: &Path, model: &StoredModel) -> Result<()> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<StoredModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;
    use crate::physics::BlackHole;
    use proptest::prelude::*;

    fn model(seed: u64) -> StoredModel {
        let domain = RadialDomain::new(BlackHole::default(), 0.1, 10.0).unwrap();
        let spec = ModelSpec::new(domain, 5.0);
        let params = init_params(&spec, seed);
        StoredModel { spec, seed, params }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model(3);
        let back = parse_model(&write_model(&m)).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params.0.iter().zip(&m.params.0) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn indicator_only_spec_round_trips() {
        let mut m = model(2);
        m.spec.shock_inputs = ShockInputs::IndicatorOnly;
        m.params = init_params(&m.spec, 2);
        assert_eq!(parse_model(&write_model(&m)).unwrap(), m);
    }

    #[test]
    fn rejects_truncated_parameter_list() {
        let text = write_model(&model(1));
        let cut: String = text.lines().take(30).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_model(&cut), Err(Error::Parse(_))));
        assert!(parse_model("not a model").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_floats_round_trip(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 4)) {
            let mut m = model(0);
            m.params.0[..4].copy_from_slice(&values);
            let back = parse_model(&write_model(&m)).unwrap();
            prop_assert_eq!(back.params, m.params);
        }
    }
}
