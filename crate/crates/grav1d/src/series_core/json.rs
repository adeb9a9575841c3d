use serde_json::{json, Value};

use super::{fmt_rational, parse_rational, Monomial, OuterSeries, Series, Slot, TruncationSpec};
use crate::error::{Error, Result};

fn spec_json(spec: &TruncationSpec) -> Value {
    json!({"kmax": spec.kmax, "dmax": spec.dmax, "lmin": spec.lmin, "lmax": spec.lmax})
}

fn terms_json(s: &Series) -> Value {
    Value::Array(
        s.terms()
            .map(|(m, c)| {
                let t: Vec<Value> = m.sparse().iter().map(|&(i, e)| json!([i, e])).collect();
                json!({"t": t, "l": m.l(), "c": fmt_rational(c)})
            })
            .collect(),
    )
}

fn bad(msg: &str) -> Error {
    Error::Parse(msg.to_string())
}

fn get_i64(v: &Value, key: &str) -> Result<i64> {
    v.get(key).and_then(Value::as_i64).ok_or_else(|| bad(&format!("missing integer {key:?}")))
}

fn parse_spec(v: &Value) -> Result<TruncationSpec> {
    let kmax = get_i64(v, "kmax")?;
    let dmax = get_i64(v, "dmax")?;
    if kmax < 0 || dmax < 0 {
        return Err(bad("negative kmax or dmax"));
    }
    TruncationSpec::new(kmax as usize, dmax as u32, get_i64(v, "lmin")? as i32, get_i64(v, "lmax")? as i32)
}

fn parse_terms(spec: TruncationSpec, v: &Value) -> Result<Series> {
    let arr = v.as_array().ok_or_else(|| bad("terms must be an array"))?;
    let mut out = Series::zero(spec);
    for term in arr {
        let t = term.get("t").and_then(Value::as_array).ok_or_else(|| bad("term without t"))?;
        let mut pairs = Vec::new();
        for p in t {
            let p = p.as_array().filter(|p| p.len() == 2).ok_or_else(|| bad("bad exponent pair"))?;
            let i = p[0].as_u64().ok_or_else(|| bad("bad index"))? as usize;
            let e = p[1].as_u64().ok_or_else(|| bad("bad exponent"))? as u32;
            pairs.push((i, e));
        }
        let l = get_i64(term, "l")? as i32;
        let c = term.get("c").and_then(Value::as_str).ok_or_else(|| bad("term without c"))?;
        let m = Monomial::from_sparse(&pairs, l);
        if !spec.admits(&m) {
            return Err(bad(&format!("term {m} outside the declared truncation")));
        }
        out.add_term(m, parse_rational(c)?);
    }
    Ok(out)
}

impl Series {
    /// The canonical JSON value.
    pub fn to_json(&self) -> Value {
        json!({"trunc": spec_json(&self.spec()), "terms": terms_json(self)})
    }

    /// Compact canonical JSON text.
    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }

    /// Parses the canonical JSON form.
    pub fn from_json(v: &Value) -> Result<Series> {
        let spec = parse_spec(v.get("trunc").ok_or_else(|| bad("missing trunc"))?)?;
        parse_terms(spec, v.get("terms").ok_or_else(|| bad("missing terms"))?)
    }

    /// Parses canonical JSON text.
    pub fn from_json_str(s: &str) -> Result<Series> {
        let v: Value = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Series::from_json(&v)
    }
}

impl OuterSeries {
    /// The canonical JSON value: slots, inner spec, and one entry per exponent vector.
    pub fn to_json(&self) -> Value {
        let slots: Vec<Value> = self
            .slots()
            .iter()
            .map(|s| json!({"name": s.name, "emin": s.emin, "emax": s.emax}))
            .collect();
        let terms: Vec<Value> =
            self.terms().map(|(e, s)| json!({"e": e, "terms": terms_json(s)})).collect();
        json!({"slots": slots, "trunc": spec_json(&self.spec()), "terms": terms})
    }

    /// Parses the canonical JSON form.
    pub fn from_json(v: &Value) -> Result<OuterSeries> {
        let spec = parse_spec(v.get("trunc").ok_or_else(|| bad("missing trunc"))?)?;
        let slots_v = v.get("slots").and_then(Value::as_array).ok_or_else(|| bad("missing slots"))?;
        let mut slots = Vec::new();
        for s in slots_v {
            let name = s.get("name").and_then(Value::as_str).ok_or_else(|| bad("slot name"))?;
            slots.push(Slot::new(name, get_i64(s, "emin")? as i32, get_i64(s, "emax")? as i32));
        }
        let mut out = OuterSeries::zero(slots, spec);
        let terms = v.get("terms").and_then(Value::as_array).ok_or_else(|| bad("missing terms"))?;
        for t in terms {
            let e: Vec<i32> = t
                .get("e")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing e"))?
                .iter()
                .map(|x| x.as_i64().map(|x| x as i32).ok_or_else(|| bad("bad exponent")))
                .collect::<Result<_>>()?;
            let s = parse_terms(spec, t.get("terms").ok_or_else(|| bad("missing inner terms"))?)?;
            out.add_coeff(e, &s);
        }
        Ok(out)
    }
}
