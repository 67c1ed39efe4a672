//! Serde adapters writing `f64` values as decimal strings with 17 significant
//! digits, which round-trip every finite double exactly.
//!
//! Deserialization accepts either a JSON number or such a string.

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::Deserialize;

/// Formats a double with 17 significant digits.
pub fn format(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrStr {
    Num(f64),
    Str(String),
}

fn parse<E: de::Error>(raw: NumOrStr) -> Result<f64, E> {
    let v = match raw {
        NumOrStr::Num(v) => v,
        NumOrStr::Str(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|e| E::custom(format!("invalid decimal `{s}`: {e}")))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(E::custom("non-finite number"))
    }
}

struct Wrapped(f64);

impl serde::Serialize for Wrapped {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(self.0))
    }
}

impl<'de> Deserialize<'de> for Wrapped {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        parse(NumOrStr::deserialize(d)?).map(Wrapped)
    }
}

pub mod scalar {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        parse(NumOrStr::deserialize(d)?)
    }
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&Wrapped(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Wrapped>::deserialize(d)?;
        Ok(raw.into_iter().map(|w| w.0).collect())
    }
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(rows.len()))?;
        for row in rows {
            let row: Vec<Wrapped> = row.iter().map(|x| Wrapped(*x)).collect();
            seq.serialize_element(&row)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let raw = Vec::<Vec<Wrapped>>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|r| r.into_iter().map(|w| w.0).collect())
            .collect())
    }
}

pub mod opt_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::vec::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw = Option::<Vec<Wrapped>>::deserialize(d)?;
        Ok(raw.map(|v| v.into_iter().map(|w| w.0).collect()))
    }
}

pub mod opt_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::matrix::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        let raw = Option::<Vec<Vec<Wrapped>>>::deserialize(d)?;
        Ok(raw.map(|m| {
            m.into_iter()
                .map(|r| r.into_iter().map(|w| w.0).collect())
                .collect()
        }))
    }
}

pub mod opt_scalar {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => s.serialize_str(&format(*v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrapped>::deserialize(d)?.map(|w| w.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(serde::Serialize, Deserialize, PartialEq, Debug)]
    struct Probe {
        #[serde(with = "scalar")]
        a: f64,
        #[serde(with = "vec")]
        b: Vec<f64>,
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(a in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL,
                               b in proptest::collection::vec(-1e300f64..1e300, 0..5)) {
            let p = Probe { a, b };
            let text = serde_json::to_string(&p).unwrap();
            let back: Probe = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(p, back);
        }
    }

    #[test]
    fn accepts_plain_numbers_and_rejects_garbage() {
        let p: Probe = serde_json::from_str(r#"{"a": 0.5, "b": [1, "2.5e0"]}"#).unwrap();
        assert_eq!(p.a, 0.5);
        assert_eq!(p.b, vec![1.0, 2.5]);
        assert!(serde_json::from_str::<Probe>(r#"{"a": "x", "b": []}"#).is_err());
    }

    #[test]
    fn seventeen_significant_digits() {
        let s = format(0.1);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
    }
}
