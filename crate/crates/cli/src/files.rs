//! JSON documents for chains and piecewise-affine systems.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use kantab_core::control::ControlledSystem;
use kantab_core::dynsys::{AffineMap, DefaultPiece, PiecewiseAffineSystem, Rect, Region};
use kantab_core::{Alphabet, LabeledMarkovChain};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Probability written as a decimal string; bare JSON numbers are accepted on input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prob(pub f64);

impl Serialize for Prob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // shortest representation that parses back to the same bits
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ProbVisitor;
        impl Visitor<'_> for ProbVisitor {
            type Value = Prob;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a probability as a decimal string or number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Prob, E> {
                v.trim()
                    .parse::<f64>()
                    .map(Prob)
                    .map_err(|_| E::custom(format!("invalid decimal {v:?}")))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Prob, E> {
                Ok(Prob(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Prob, E> {
                Ok(Prob(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Prob, E> {
                Ok(Prob(v as f64))
            }
        }
        d.deserialize_any(ProbVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseEntry {
    pub from: String,
    pub to: String,
    pub p: Prob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Transitions {
    /// Row-major matrix in state order.
    Dense(Vec<Vec<Prob>>),
    /// Missing entries are zero.
    Sparse(Vec<SparseEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub schema_version: u32,
    pub alphabet: Vec<String>,
    pub states: Vec<StateEntry>,
    /// Missing states start with probability zero.
    pub initial: BTreeMap<String, Prob>,
    pub transitions: Transitions,
}

fn check_version(found: u32) -> Result<(), CliError> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "unsupported schema_version {found} (expected {SCHEMA_VERSION})"
        )))
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse(format!("{what}: {e}")))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn symbol(alphabet: &Alphabet, name: &str, context: &str) -> Result<usize, CliError> {
    alphabet
        .index_of(name)
        .ok_or_else(|| CliError::Validation(format!("{context}: label {name:?} is not in the alphabet")))
}

impl ChainFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        parse_json(text, "chain file")
    }

    pub fn load(path: &Path) -> Result<LabeledMarkovChain, CliError> {
        Self::parse(&read(path)?)
            .and_then(|f| f.to_chain())
            .map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain file serializes")
    }

    /// States are named `s0, s1, ..` unless `ids` is given.
    pub fn from_chain(chain: &LabeledMarkovChain, ids: Option<Vec<String>>) -> Self {
        let n = chain.n_states();
        let ids = ids.unwrap_or_else(|| (0..n).map(|i| format!("s{i}")).collect());
        let alphabet = chain.alphabet();
        let states = ids
            .iter()
            .zip(chain.labels())
            .map(|(id, &l)| StateEntry {
                id: id.clone(),
                label: alphabet.name(l).expect("valid label").to_string(),
            })
            .collect();
        let initial = ids
            .iter()
            .zip(chain.initial())
            .filter(|(_, &p)| p != 0.0)
            .map(|(id, &p)| (id.clone(), Prob(p)))
            .collect();
        let dense = (0..n).map(|i| chain.row(i).iter().map(|&p| Prob(p)).collect()).collect();
        Self {
            schema_version: SCHEMA_VERSION,
            alphabet: alphabet.symbols().to_vec(),
            states,
            initial,
            transitions: Transitions::Dense(dense),
        }
    }

    pub fn to_chain(&self) -> Result<LabeledMarkovChain, CliError> {
        check_version(self.schema_version)?;
        let alphabet = Alphabet::new(self.alphabet.iter().cloned()).map_err(CliError::from)?;
        let n = self.states.len();
        let mut index = BTreeMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if index.insert(s.id.as_str(), i).is_some() {
                return Err(CliError::Validation(format!("duplicate state id {:?}", s.id)));
            }
        }
        let lookup = |id: &str, context: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| CliError::Validation(format!("{context}: unknown state {id:?}")))
        };
        let labels = self
            .states
            .iter()
            .map(|s| symbol(&alphabet, &s.label, &format!("state {:?}", s.id)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut initial = vec![0.0; n];
        for (id, p) in &self.initial {
            initial[lookup(id, "initial")?] = p.0;
        }
        let rows = match &self.transitions {
            Transitions::Dense(rows) => rows.iter().map(|r| r.iter().map(|p| p.0).collect()).collect(),
            Transitions::Sparse(entries) => {
                let mut rows = vec![vec![0.0; n]; n];
                for e in entries {
                    let (i, j) = (lookup(&e.from, "transitions")?, lookup(&e.to, "transitions")?);
                    if rows[i][j] != 0.0 {
                        return Err(CliError::Validation(format!(
                            "transitions: duplicate entry {:?} -> {:?}",
                            e.from, e.to
                        )));
                    }
                    rows[i][j] = e.p.0;
                }
                rows
            }
        };
        Ok(LabeledMarkovChain::new_validated(rows, initial, labels, alphabet)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub label: String,
    pub map: MapSpec,
}

/// Dynamics on the part of the box no region covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultSpec {
    pub label: String,
    pub map: MapSpec,
}

/// Additive input `x + direction * u`, clamped into the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuationSpec {
    pub direction: Vec<f64>,
    pub actions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub schema_version: u32,
    pub alphabet: Vec<String>,
    #[serde(rename = "box")]
    pub space: BoxSpec,
    pub regions: Vec<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<DefaultSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuation: Option<ActuationSpec>,
}

impl From<&AffineMap> for MapSpec {
    fn from(m: &AffineMap) -> Self {
        Self {
            matrix: m.matrix.clone(),
            offset: m.offset.clone(),
        }
    }
}

impl From<&MapSpec> for AffineMap {
    fn from(m: &MapSpec) -> Self {
        AffineMap {
            matrix: m.matrix.clone(),
            offset: m.offset.clone(),
        }
    }
}

impl SystemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        parse_json(text, "system file")
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read(path)?).map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system file serializes")
    }

    pub fn from_system(sys: &PiecewiseAffineSystem, actuation: Option<ActuationSpec>) -> Self {
        let alphabet = kantab_core::dynsys::DynamicalSystem::alphabet(sys);
        let name = |l: usize| alphabet.name(l).expect("valid label").to_string();
        let space = kantab_core::dynsys::DynamicalSystem::space(sys);
        Self {
            schema_version: SCHEMA_VERSION,
            alphabet: alphabet.symbols().to_vec(),
            space: BoxSpec {
                lower: space.lower.clone(),
                upper: space.upper.clone(),
            },
            regions: sys
                .regions()
                .iter()
                .map(|r| RegionSpec {
                    name: r.name.clone(),
                    lower: r.rect.lower.clone(),
                    upper: r.rect.upper.clone(),
                    label: name(r.label),
                    map: (&r.map).into(),
                })
                .collect(),
            default: sys.default_piece().map(|d| DefaultSpec {
                label: name(d.label),
                map: (&d.map).into(),
            }),
            actuation,
        }
    }

    pub fn from_controlled(csys: &ControlledSystem<PiecewiseAffineSystem>) -> Self {
        Self::from_system(
            csys.base(),
            Some(ActuationSpec {
                direction: csys.direction().to_vec(),
                actions: csys.actions().to_vec(),
            }),
        )
    }

    pub fn to_system(&self) -> Result<PiecewiseAffineSystem, CliError> {
        check_version(self.schema_version)?;
        let alphabet = Alphabet::new(self.alphabet.iter().cloned())?;
        let space = Rect::new(self.space.lower.clone(), self.space.upper.clone())?;
        let regions = self
            .regions
            .iter()
            .map(|r| {
                Ok(Region {
                    name: r.name.clone(),
                    rect: Rect::new(r.lower.clone(), r.upper.clone())?,
                    label: symbol(&alphabet, &r.label, &format!("region {:?}", r.name))?,
                    map: (&r.map).into(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let default = match &self.default {
            Some(d) => Some(DefaultPiece {
                label: symbol(&alphabet, &d.label, "default")?,
                map: (&d.map).into(),
            }),
            None => None,
        };
        Ok(PiecewiseAffineSystem::new(space, alphabet, regions, default)?)
    }

    pub fn to_controlled(&self) -> Result<ControlledSystem<PiecewiseAffineSystem>, CliError> {
        let act = self
            .actuation
            .as_ref()
            .ok_or_else(|| CliError::Validation("system file has no actuation block".into()))?;
        Ok(ControlledSystem::new(
            self.to_system()?,
            act.actions.clone(),
            act.direction.clone(),
        )?)
    }
}
