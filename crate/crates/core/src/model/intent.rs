//! Dialogue acts and their combinations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntentError {
    #[error("unknown intent name `{0}`")]
    UnknownAtom(String),
    #[error("composite intent must have between 1 and {max} atoms, got {got}", max = CompositeIntent::MAX_ATOMS)]
    BadLength { got: usize },
    #[error("duplicate atom `{0}` in composite intent")]
    Duplicate(IntentAtom),
    #[error("cannot parse composite intent `{0}`")]
    Unparseable(String),
}

/// An atomic dialogue act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IntentAtom {
    Greet,
    Ask,
    Inform,
    AskClarification,
    ProvideClarification,
    NegotiatePriceIncrease,
    NegotiatePriceDecrease,
    NegotiatePriceNoChange,
    NegotiateAddX,
    NegotiateRemoveX,
    Accept,
    Reject,
    Acknowledge,
    AskPrice,
    TellPrice,
    AvoidRejection,
}

impl IntentAtom {
    pub const ALL: [IntentAtom; 16] = [
        IntentAtom::Greet,
        IntentAtom::Ask,
        IntentAtom::Inform,
        IntentAtom::AskClarification,
        IntentAtom::ProvideClarification,
        IntentAtom::NegotiatePriceIncrease,
        IntentAtom::NegotiatePriceDecrease,
        IntentAtom::NegotiatePriceNoChange,
        IntentAtom::NegotiateAddX,
        IntentAtom::NegotiateRemoveX,
        IntentAtom::Accept,
        IntentAtom::Reject,
        IntentAtom::Acknowledge,
        IntentAtom::AskPrice,
        IntentAtom::TellPrice,
        IntentAtom::AvoidRejection,
    ];

    /// The eleven core negotiation acts.
    pub const CORE: [IntentAtom; 11] = [
        IntentAtom::Greet,
        IntentAtom::Ask,
        IntentAtom::Inform,
        IntentAtom::AskClarification,
        IntentAtom::NegotiatePriceIncrease,
        IntentAtom::NegotiatePriceDecrease,
        IntentAtom::NegotiatePriceNoChange,
        IntentAtom::NegotiateAddX,
        IntentAtom::NegotiateRemoveX,
        IntentAtom::Accept,
        IntentAtom::Reject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntentAtom::Greet => "Greet",
            IntentAtom::Ask => "Ask",
            IntentAtom::Inform => "Inform",
            IntentAtom::AskClarification => "Ask-Clarification",
            IntentAtom::ProvideClarification => "Provide-Clarification",
            IntentAtom::NegotiatePriceIncrease => "Negotiate-Price-Increase",
            IntentAtom::NegotiatePriceDecrease => "Negotiate-Price-Decrease",
            IntentAtom::NegotiatePriceNoChange => "Negotiate-Price-NoChange",
            IntentAtom::NegotiateAddX => "Negotiate-Add-X",
            IntentAtom::NegotiateRemoveX => "Negotiate-Remove-X",
            IntentAtom::Accept => "Accept",
            IntentAtom::Reject => "Reject",
            IntentAtom::Acknowledge => "Acknowledge",
            IntentAtom::AskPrice => "Ask-Price",
            IntentAtom::TellPrice => "Tell-Price",
            IntentAtom::AvoidRejection => "Avoid-Rejection",
        }
    }

    /// Auxiliary acts seen in annotated utterances but outside the core set.
    /// A classifier may collapse these onto their nearest core act.
    pub fn is_auxiliary(self) -> bool {
        !Self::CORE.contains(&self)
    }

    /// Acts that always state a price.
    pub fn is_price_bearing(self) -> bool {
        matches!(
            self,
            IntentAtom::NegotiatePriceIncrease
                | IntentAtom::NegotiatePriceDecrease
                | IntentAtom::NegotiatePriceNoChange
                | IntentAtom::TellPrice
        )
    }

    pub fn is_bundle_op(self) -> bool {
        matches!(self, IntentAtom::NegotiateAddX | IntentAtom::NegotiateRemoveX)
    }
}

impl fmt::Display for IntentAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntentAtom {
    type Err = IntentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IntentAtom::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| IntentError::UnknownAtom(s.to_string()))
    }
}

impl Serialize for IntentAtom {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for IntentAtom {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One or more atoms expressed in a single utterance, e.g. `Greet-Ask`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<IntentAtom>", into = "Vec<IntentAtom>")]
pub struct CompositeIntent {
    atoms: Vec<IntentAtom>,
}

impl CompositeIntent {
    pub const MAX_ATOMS: usize = 3;

    pub fn new(atoms: Vec<IntentAtom>) -> Result<Self, IntentError> {
        if atoms.is_empty() || atoms.len() > Self::MAX_ATOMS {
            return Err(IntentError::BadLength { got: atoms.len() });
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].contains(a) {
                return Err(IntentError::Duplicate(*a));
            }
        }
        Ok(Self { atoms })
    }

    pub fn single(atom: IntentAtom) -> Self {
        Self { atoms: vec![atom] }
    }

    /// Prepends `Greet` unless already present.
    pub fn with_greet(&self) -> Result<Self, IntentError> {
        if self.contains(IntentAtom::Greet) {
            return Ok(self.clone());
        }
        let mut atoms = Vec::with_capacity(self.atoms.len() + 1);
        atoms.push(IntentAtom::Greet);
        atoms.extend_from_slice(&self.atoms);
        Self::new(atoms)
    }

    /// The composite with `Greet` removed, or `None` if nothing else remains.
    pub fn without_greet(&self) -> Option<Self> {
        let atoms: Vec<_> = self
            .atoms
            .iter()
            .copied()
            .filter(|a| *a != IntentAtom::Greet)
            .collect();
        (!atoms.is_empty()).then_some(Self { atoms })
    }

    pub fn atoms(&self) -> &[IntentAtom] {
        &self.atoms
    }

    pub fn contains(&self, atom: IntentAtom) -> bool {
        self.atoms.contains(&atom)
    }

    pub fn is_price_bearing(&self) -> bool {
        self.atoms.iter().any(|a| a.is_price_bearing())
    }

    pub fn has_bundle_op(&self) -> bool {
        self.atoms.iter().any(|a| a.is_bundle_op())
    }

    pub fn name(&self) -> String {
        self.atoms
            .iter()
            .map(|a| a.name())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Parses a rendered name such as `Greet-Negotiate-Price-Decrease`.
    ///
    /// Atom names themselves contain dashes, so the name is split into
    /// dash-separated words and matched against atom word sequences with
    /// backtracking.
    pub fn parse(name: &str) -> Result<Self, IntentError> {
        let words: Vec<&str> = name.split('-').map(str::trim).collect();
        let mut out = Vec::new();
        if split_atoms(&words, &mut out) {
            Self::new(out)
        } else {
            Err(IntentError::Unparseable(name.to_string()))
        }
    }
}

fn split_atoms(words: &[&str], out: &mut Vec<IntentAtom>) -> bool {
    if words.is_empty() {
        return !out.is_empty();
    }
    if out.len() == CompositeIntent::MAX_ATOMS {
        return false;
    }
    for atom in IntentAtom::ALL {
        let atom_words: Vec<&str> = atom.name().split('-').collect();
        if atom_words.len() <= words.len()
            && atom_words
                .iter()
                .zip(words)
                .all(|(a, w)| a.eq_ignore_ascii_case(w))
        {
            out.push(atom);
            if split_atoms(&words[atom_words.len()..], out) {
                return true;
            }
            out.pop();
        }
    }
    false
}

impl fmt::Display for CompositeIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for CompositeIntent {
    type Err = IntentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl TryFrom<Vec<IntentAtom>> for CompositeIntent {
    type Error = IntentError;

    fn try_from(atoms: Vec<IntentAtom>) -> Result<Self, Self::Error> {
        Self::new(atoms)
    }
}

impl From<CompositeIntent> for Vec<IntentAtom> {
    fn from(ci: CompositeIntent) -> Self {
        ci.atoms
    }
}

impl From<IntentAtom> for CompositeIntent {
    fn from(atom: IntentAtom) -> Self {
        Self::single(atom)
    }
}

/// Builds a composite from atoms known to be valid at compile time.
#[macro_export]
macro_rules! intent {
    ($($atom:ident)-+) => {
        $crate::model::CompositeIntent::new(vec![$($crate::model::IntentAtom::$atom),+])
            .expect("static composite intent")
    };
}
