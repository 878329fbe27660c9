//! Byte-stable renderings of simulation results.

use std::fmt::Write as _;

use serde_json::Value;
use zoo_ood::fmt_num::sig6;
use zoo_ood::sim::{PowerStats, SchemeRate};

pub fn id_uniform_csv(rates: &[SchemeRate]) -> String {
    let mut out = String::from("scheme,trials,accepted,tpr,std_error\n");
    for r in rates {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scheme,
            r.trials,
            r.accepted,
            sig6(r.tpr),
            sig6(r.std_error)
        );
    }
    out
}

pub fn mixture_csv(s: &PowerStats) -> String {
    format!(
        "trials,m0,m1,mean_tpr_like,fdr,fdr_std_error,rejection_fraction,detection_rate,detection_std_error,ood_rate\n\
         {},{},{},{},{},{},{},{},{},{}\n",
        s.trials,
        s.m0,
        s.m1,
        sig6(s.mean_tpr_like),
        sig6(s.fdr),
        sig6(s.fdr_std_error),
        sig6(s.rejection_fraction),
        sig6(s.detection_rate),
        sig6(s.detection_std_error),
        sig6(s.ood_rate),
    )
}

/// Pretty JSON with every non-integer number cut to six significant digits.
pub fn rounded_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&round(value.clone())).expect("JSON value serializes");
    s.push('\n');
    s
}

fn round(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            sig6(x).parse::<f64>().ok().and_then(serde_json::Number::from_f64).map_or(Value::Number(n), Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round(v))).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounds_nested_floats_only() {
        let v = json!({ "a": 0.123456789, "b": [1, 2.0000004], "c": "x" });
        assert_eq!(
            serde_json::to_string(&round(v)).unwrap(),
            r#"{"a":0.123457,"b":[1,2.0],"c":"x"}"#
        );
    }
}
