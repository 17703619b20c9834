//! Lag sets.
//!
//! A lag `j` in `-d..=-1` names the past coordinate `X_{t+j}`. Internally a lag
//! is stored as its distance `k = -j >= 1`; the public string and JSON forms
//! use the signed convention (`-1`, `-8`, ...).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{contract, Result};

/// A subset of `{-d, ..., -1}`, kept sorted by increasing distance
/// (most recent past first).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct LagSet {
    order: usize,
    lags: Vec<usize>,
}

impl LagSet {
    pub fn empty(order: usize) -> Self {
        Self {
            order,
            lags: Vec::new(),
        }
    }

    /// `{-d, ..., -1}`.
    pub fn full(order: usize) -> Self {
        Self {
            order,
            lags: (1..=order).collect(),
        }
    }

    /// Builds a lag set from distances (`3` means lag `-3`).
    pub fn from_distances(
        order: usize,
        distances: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut lags: Vec<usize> = distances.into_iter().collect();
        lags.sort_unstable();
        for w in lags.windows(2) {
            if w[0] == w[1] {
                return Err(contract(format!("duplicate lag -{}", w[0])));
            }
        }
        if let Some(&k) = lags.iter().find(|&&k| k == 0 || k > order) {
            return Err(contract(format!("lag -{k} outside [-{order}, -1]")));
        }
        Ok(Self { order, lags })
    }

    /// Builds a lag set from signed lags (`-3` means three steps back).
    pub fn from_signed(order: usize, lags: impl IntoIterator<Item = i64>) -> Result<Self> {
        let mut dist = Vec::new();
        for j in lags {
            if j >= 0 {
                return Err(contract(format!("lag {j} is not negative")));
            }
            dist.push(j.unsigned_abs() as usize);
        }
        Self::from_distances(order, dist)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    /// Distances in increasing order.
    pub fn distances(&self) -> &[usize] {
        &self.lags
    }

    pub fn signed(&self) -> Vec<i64> {
        self.lags.iter().map(|&k| -(k as i64)).collect()
    }

    pub fn contains(&self, distance: usize) -> bool {
        self.lags.binary_search(&distance).is_ok()
    }

    /// Position of `distance` within the sorted set.
    pub fn position(&self, distance: usize) -> Option<usize> {
        self.lags.binary_search(&distance).ok()
    }

    pub fn is_subset(&self, other: &LagSet) -> bool {
        self.lags.iter().all(|&k| other.contains(k))
    }

    pub fn with(&self, distance: usize) -> Result<Self> {
        if distance == 0 || distance > self.order {
            return Err(contract(format!(
                "lag -{distance} outside [-{}, -1]",
                self.order
            )));
        }
        let mut lags = self.lags.clone();
        if let Err(pos) = lags.binary_search(&distance) {
            lags.insert(pos, distance);
        }
        Ok(Self {
            order: self.order,
            lags,
        })
    }

    pub fn without(&self, distance: usize) -> Self {
        Self {
            order: self.order,
            lags: self
                .lags
                .iter()
                .copied()
                .filter(|&k| k != distance)
                .collect(),
        }
    }

    /// Distances in `{1..=d}` not in the set.
    pub fn complement(&self) -> Vec<usize> {
        (1..=self.order).filter(|&k| !self.contains(k)).collect()
    }

    /// Parses `"-1,-8"` (signed) or `"1,8"` (distances).
    pub fn parse(order: usize, s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let v: i64 = tok
                .parse()
                .map_err(|_| contract(format!("bad lag {tok:?}")))?;
            out.push(v.unsigned_abs() as usize);
        }
        Self::from_distances(order, out)
    }
}

impl fmt::Display for LagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, k) in self.lags.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "-{k}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Serialize, Deserialize)]
struct LagSetRepr {
    order: usize,
    lags: Vec<i64>,
}

impl Serialize for LagSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LagSetRepr {
            order: self.order,
            lags: self.signed(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LagSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = LagSetRepr::deserialize(d)?;
        LagSet::from_signed(r.order, r.lags).map_err(serde::de::Error::custom)
    }
}
