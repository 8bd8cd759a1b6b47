//! Versioned JSON file format for mechanisms.
//!
//! Floats are written with 17 significant digits, so `write → read → write`
//! reproduces the file byte for byte.

use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};

use crate::strategies::{Strategy, StrategyKind, TreeVariant};
use crate::{Error, Result};

pub const DESCRIPTOR_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum MechanismParams {
    /// Row-major lower triangle: `C[0,0], C[1,0], C[1,1], C[2,0], …`.
    Dense {
        values: Vec<f64>,
    },
    Toeplitz {
        coeffs: Vec<f64>,
    },
    BandedToeplitz {
        coeffs: Vec<f64>,
    },
    Blt {
        alpha: Vec<f64>,
        lambda: Vec<f64>,
    },
    Tree {
        variant: TreeVariant,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismDescriptor {
    pub version: String,
    pub n: usize,
    #[serde(flatten)]
    pub params: MechanismParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Map<String, Value>>,
}

impl MechanismDescriptor {
    pub fn from_strategy(strategy: &Strategy, metadata: Option<Map<String, Value>>) -> Self {
        let params = match &strategy.kind {
            StrategyKind::Dense(c) => MechanismParams::Dense {
                values: (0..strategy.n).flat_map(|t| (0..=t).map(move |s| c[(t, s)])).collect(),
            },
            StrategyKind::Toeplitz(c) => MechanismParams::Toeplitz { coeffs: c.clone() },
            StrategyKind::BandedToeplitz(c) => MechanismParams::BandedToeplitz { coeffs: c.clone() },
            StrategyKind::Blt { alpha, lambda } => {
                MechanismParams::Blt { alpha: alpha.clone(), lambda: lambda.clone() }
            }
            StrategyKind::Tree(variant) => MechanismParams::Tree { variant: *variant },
        };
        Self { version: DESCRIPTOR_VERSION.into(), n: strategy.n, params, metadata }
    }

    pub fn to_strategy(&self) -> Result<Strategy> {
        if self.version != DESCRIPTOR_VERSION {
            return Err(Error::Config(format!("unsupported descriptor version '{}'", self.version)));
        }
        let n = self.n;
        let s = match &self.params {
            MechanismParams::Dense { values } => {
                if values.len() != n * (n + 1) / 2 {
                    return Err(Error::Shape { expected: n * (n + 1) / 2, got: values.len() });
                }
                let mut c = DMatrix::zeros(n, n);
                let mut it = values.iter();
                for t in 0..n {
                    for s in 0..=t {
                        c[(t, s)] = *it.next().expect("length checked");
                    }
                }
                Strategy::dense(c)
            }
            MechanismParams::Toeplitz { coeffs } => {
                if coeffs.len() != n {
                    return Err(Error::Shape { expected: n, got: coeffs.len() });
                }
                Strategy::toeplitz(coeffs.clone())
            }
            MechanismParams::BandedToeplitz { coeffs } => Strategy::banded(n, coeffs.clone()),
            MechanismParams::Blt { alpha, lambda } => Strategy::blt(n, alpha.clone(), lambda.clone()),
            MechanismParams::Tree { variant } => Strategy::tree(n, *variant),
        };
        s.map_err(|e| Error::Config(format!("invalid mechanism: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
        self.serialize(&mut ser).map_err(|e| Error::Config(format!("serializing descriptor: {e}")))?;
        buf.push(b'\n');
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid descriptor: {e}")))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::Config(format!("writing {}: {e}", path.display())))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Pretty JSON with floats in `{:.16e}` form.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}
