//! JSON text with reals written at 17 significant digits.
//!
//! Seventeen significant digits identify every finite `f64` uniquely, and
//! `serde_json` is built with `float_roundtrip`, so text written here parses
//! back bit-exactly.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

/// Compact formatter (the trait defaults) that prints every `f64` as `d.dddddddddddddddde±x`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` with [`SeventeenDigits`].
///
/// Non-finite floats have no JSON representation; callers must reject them
/// first (serde_json would otherwise emit `null`).
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut out = Vec::with_capacity(256);
    let mut ser = Serializer::with_formatter(&mut out, SeventeenDigits);
    value.serialize(&mut ser)?;
    Ok(out)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    // The formatter only emits ASCII.
    to_vec(value).map(|v| String::from_utf8(v).expect("JSON output is UTF-8"))
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// FNV-1a digest of the canonical JSON text, as 16 lowercase hex digits.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(format!("{:016x}", fnv1a64(&to_vec(value)?)))
}


/// Serde adapter for reals that may be non-finite: finite values are numbers,
/// `+inf`/`-inf`/NaN become the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub(crate) fn to_text(v: f64) -> Option<&'static str> {
        if v.is_nan() {
            Some("nan")
        } else if v == f64::INFINITY {
            Some("inf")
        } else if v == f64::NEG_INFINITY {
            Some("-inf")
        } else {
            None
        }
    }

    pub(crate) fn from_text<E: de::Error>(s: &str) -> Result<f64, E> {
        match s {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(E::custom(format!("invalid real sentinel `{other}`"))),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(crate) enum Repr {
        Num(f64),
        Text(String),
    }

    impl Repr {
        pub(crate) fn into_f64<E: de::Error>(self) -> Result<f64, E> {
            match self {
                Repr::Num(v) => Ok(v),
                Repr::Text(s) => from_text(&s),
            }
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match to_text(*v) {
            Some(text) => s.serialize_str(text),
            None => s.serialize_f64(*v),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Repr::deserialize(d)?.into_f64()
    }
}

/// [`real`] for `Option<f64>`; `None` is `null`.
pub mod opt_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::real::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<super::real::Repr>::deserialize(d)?
            .map(super::real::Repr::into_f64)
            .transpose()
    }
}

/// [`real`] for `Vec<f64>`.
pub mod reals {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            match super::real::to_text(*x) {
                Some(text) => seq.serialize_element(text)?,
                None => seq.serialize_element(x)?,
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<super::real::Repr>::deserialize(d)?
            .into_iter()
            .map(super::real::Repr::into_f64)
            .collect()
    }
}

#[cfg(test)]
mod real_tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Probe {
        #[serde(with = "super::real")]
        a: f64,
        #[serde(with = "super::opt_real")]
        b: Option<f64>,
        #[serde(with = "super::reals")]
        c: Vec<f64>,
    }

    #[test]
    fn sentinels_round_trip() {
        let p = Probe {
            a: f64::INFINITY,
            b: Some(f64::NEG_INFINITY),
            c: vec![1.5, f64::INFINITY],
        };
        let text = super::to_string(&p).unwrap();
        assert_eq!(text, r#"{"a":"inf","b":"-inf","c":[1.5000000000000000e0,"inf"]}"#);
        assert_eq!(serde_json::from_str::<Probe>(&text).unwrap(), p);
        let none: Probe = serde_json::from_str(r#"{"a":2,"b":null,"c":[]}"#).unwrap();
        assert_eq!(none.b, None);
        assert!(serde_json::from_str::<Probe>(r#"{"a":"huge","b":null,"c":[]}"#).is_err());
    }
}
