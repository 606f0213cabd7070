use std::fmt;

use crate::error::{Error, Result};
use crate::shape::NetworkShape;

/// A complete message: one symbol per cluster, each in `1..=L`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    shape: NetworkShape,
    symbols: Vec<usize>,
}

impl Message {
    pub fn new(shape: NetworkShape, symbols: Vec<usize>) -> Result<Self> {
        if symbols.len() != shape.clusters() {
            return Err(Error::LengthMismatch {
                expected: shape.clusters(),
                got: symbols.len(),
            });
        }
        for (pos, &s) in symbols.iter().enumerate() {
            if s < 1 || s > shape.cluster_size() {
                return Err(Error::SymbolOutOfRange {
                    symbol: s,
                    position: pos + 1,
                    cluster_size: shape.cluster_size(),
                });
            }
        }
        Ok(Self { shape, symbols })
    }

    /// Parses the comma-separated text form, e.g. `9,4,3,10`.
    pub fn parse(shape: NetworkShape, text: &str) -> Result<Self> {
        let symbols = parse_fields(text)?
            .into_iter()
            .map(|field| {
                field.parse::<usize>().map_err(|_| Error::Parse {
                    input: text.to_string(),
                    reason: format!("`{field}` is not a symbol"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, symbols)
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    /// Symbol of 1-based `cluster`.
    pub fn symbol(&self, cluster: usize) -> usize {
        self.symbols[cluster - 1]
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_csv(f, self.symbols.iter().map(|s| s.to_string()))
    }
}

/// One probe position: a known symbol or an erasure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Known(usize),
    Erased,
}

/// A partially erased message presented for retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Probe {
    shape: NetworkShape,
    slots: Vec<Slot>,
}

impl Probe {
    pub fn new(shape: NetworkShape, slots: Vec<Slot>) -> Result<Self> {
        if slots.len() != shape.clusters() {
            return Err(Error::LengthMismatch {
                expected: shape.clusters(),
                got: slots.len(),
            });
        }
        for (pos, slot) in slots.iter().enumerate() {
            if let Slot::Known(s) = slot {
                if *s < 1 || *s > shape.cluster_size() {
                    return Err(Error::SymbolOutOfRange {
                        symbol: *s,
                        position: pos + 1,
                        cluster_size: shape.cluster_size(),
                    });
                }
            }
        }
        Ok(Self { shape, slots })
    }

    /// Parses the text form with `?` marking erased positions, e.g. `9,4,?,10`.
    pub fn parse(shape: NetworkShape, text: &str) -> Result<Self> {
        let slots = parse_fields(text)?
            .into_iter()
            .map(|field| {
                if field == "?" {
                    Ok(Slot::Erased)
                } else {
                    field
                        .parse::<usize>()
                        .map(Slot::Known)
                        .map_err(|_| Error::Parse {
                            input: text.to_string(),
                            reason: format!("`{field}` is neither a symbol nor `?`"),
                        })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, slots)
    }

    /// A probe with no erased positions, equivalent to the message itself.
    pub fn from_message(msg: &Message) -> Self {
        Self {
            shape: msg.shape(),
            slots: msg.symbols().iter().map(|&s| Slot::Known(s)).collect(),
        }
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Slot of 1-based `cluster`.
    pub fn slot(&self, cluster: usize) -> Slot {
        self.slots[cluster - 1]
    }

    pub fn erased_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, Slot::Erased))
            .count()
    }

    /// Per-cluster erasure flags, 0-based for the iteration machinery.
    pub(crate) fn erased_flags(&self) -> Vec<bool> {
        self.slots
            .iter()
            .map(|s| matches!(s, Slot::Erased))
            .collect()
    }

    /// True if `msg` agrees with every known slot.
    pub fn matches(&self, msg: &Message) -> bool {
        self.shape == msg.shape()
            && self
                .slots
                .iter()
                .zip(msg.symbols())
                .all(|(slot, &s)| match slot {
                    Slot::Known(k) => *k == s,
                    Slot::Erased => true,
                })
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_csv(
            f,
            self.slots.iter().map(|slot| match slot {
                Slot::Known(s) => s.to_string(),
                Slot::Erased => "?".to_string(),
            }),
        )
    }
}

fn parse_fields(text: &str) -> Result<Vec<String>> {
    let fields: Vec<String> = text.split(',').map(|f| f.trim().to_string()).collect();
    if fields.iter().any(|f| f.is_empty()) {
        return Err(Error::Parse {
            input: text.to_string(),
            reason: "empty field".to_string(),
        });
    }
    Ok(fields)
}

fn write_csv<I: Iterator<Item = String>>(f: &mut fmt::Formatter<'_>, fields: I) -> fmt::Result {
    for (i, field) in fields.enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{field}")?;
    }
    Ok(())
}
