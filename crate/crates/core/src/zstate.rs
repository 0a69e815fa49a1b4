//! Window states `z = (a_{h-L:h-1}, o_{h-L+1:h})` and their dense encoding.
//!
//! Slots at nonpositive time indices hold PAD symbols, so histories shorter
//! than `L` map to a unique canonical window. Each slot is an
//! (action, observation) pair with codes
//!
//! * actions: `0..A`, PAD = `A`;
//! * observations: `0..O`, sink = `O`, PAD = `O + 1`.
//!
//! A window is the base-`(A+1)(O+2)` number whose most significant digit is
//! the oldest slot, which makes `advance` a shift and `suffix` a modulus.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::History;

/// Dense index of a canonical window within its [`ZSpace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZState(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZSpace {
    pub window: usize,
    pub n_actions: usize,
    /// Non-sink observation count `O`.
    pub n_obs: usize,
}

/// Decoded slot content.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Pad,
    Pair { action: usize, obs: usize },
}

impl ZSpace {
    pub fn new(window: usize, n_actions: usize, n_obs: usize) -> Result<Self> {
        let space = ZSpace {
            window,
            n_actions,
            n_obs,
        };
        let radix = space.radix() as u128;
        let mut total: u128 = 1;
        for _ in 0..window {
            total = total.saturating_mul(radix);
        }
        if total > u64::MAX as u128 {
            return Err(Error::DeskScale(format!(
                "window space ({}^{window}) does not fit a 64-bit index",
                space.radix()
            )));
        }
        Ok(space)
    }

    pub fn radix(&self) -> u64 {
        ((self.n_actions + 1) * (self.n_obs + 2)) as u64
    }

    /// `(A+1)^L (O+2)^L`, the size of the dense index range.
    pub fn size(&self) -> u64 {
        self.radix().pow(self.window as u32)
    }

    pub fn pad_action(&self) -> usize {
        self.n_actions
    }

    pub fn sink_obs(&self) -> usize {
        self.n_obs
    }

    pub fn pad_obs(&self) -> usize {
        self.n_obs + 1
    }

    fn pair_code(&self, action: usize, obs: usize) -> u64 {
        (action * (self.n_obs + 2) + obs) as u64
    }

    fn pad_code(&self) -> u64 {
        self.pair_code(self.pad_action(), self.pad_obs())
    }

    /// The all-PAD window (the state at step 1).
    pub fn initial(&self) -> ZState {
        let pad = self.pad_code();
        ZState((0..self.window).fold(0u64, |acc, _| acc * self.radix() + pad))
    }

    /// Canonical window of the last `min(L, h - 1)` pairs of a history.
    pub fn canonical(&self, history: &History) -> ZState {
        self.canonical_pairs(history.pairs())
    }

    /// Canonical window from `(a_t, o_{t+1})` pairs, oldest first.
    pub fn canonical_pairs<I>(&self, pairs: I) -> ZState
    where
        I: DoubleEndedIterator<Item = (usize, usize)> + ExactSizeIterator,
    {
        let skip = pairs.len().saturating_sub(self.window);
        pairs
            .skip(skip)
            .fold(self.initial(), |z, (a, o)| self.advance(z, a, o))
    }

    /// Drops the oldest slot and appends `(action, obs)`.
    pub fn advance(&self, z: ZState, action: usize, obs: usize) -> ZState {
        if self.window == 0 {
            return z;
        }
        let modulus = self.size() / self.radix();
        ZState((z.0 % modulus) * self.radix() + self.pair_code(action, obs))
    }

    /// The `k` most recent slots, as a window state of width `k`.
    pub fn suffix(&self, z: ZState, k: usize) -> ZState {
        debug_assert!(k <= self.window);
        ZState(z.0 % self.radix().pow(k as u32))
    }

    /// Same space with a narrower window.
    pub fn with_window(&self, window: usize) -> ZSpace {
        ZSpace { window, ..*self }
    }

    pub fn slots(&self, z: ZState) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.window);
        let mut code = z.0;
        for _ in 0..self.window {
            let digit = code % self.radix();
            code /= self.radix();
            let action = (digit / (self.n_obs as u64 + 2)) as usize;
            let obs = (digit % (self.n_obs as u64 + 2)) as usize;
            out.push(if action == self.pad_action() || obs == self.pad_obs() {
                Slot::Pad
            } else {
                Slot::Pair { action, obs }
            });
        }
        out.reverse();
        out
    }

    /// Final observation `o(z)`, or `None` when the last slot is PAD.
    pub fn last_obs(&self, z: ZState) -> Option<usize> {
        if self.window == 0 {
            return None;
        }
        let obs = (z.0 % self.radix() % (self.n_obs as u64 + 2)) as usize;
        (obs != self.pad_obs()).then_some(obs)
    }

    /// Windows containing the sink observation lie outside `Z`.
    pub fn is_sink(&self, z: ZState) -> bool {
        self.slots(z)
            .iter()
            .any(|s| matches!(s, Slot::Pair { obs, .. } if *obs == self.sink_obs()))
    }

    /// The meaningful `(a, o)` pairs of a window, oldest first.
    pub fn pairs(&self, z: ZState) -> Vec<(usize, usize)> {
        self.slots(z)
            .into_iter()
            .filter_map(|s| match s {
                Slot::Pad => None,
                Slot::Pair { action, obs } => Some((action, obs)),
            })
            .collect()
    }

    /// All canonical windows of `Z` (no sink) that can occur at step `h`.
    pub fn windows_at(&self, h: usize) -> Vec<ZState> {
        let filled = self.window.min(h.saturating_sub(1));
        let mut out = vec![self.initial()];
        for _ in 0..filled {
            let mut next = Vec::with_capacity(out.len() * self.n_actions * self.n_obs);
            for &z in &out {
                for a in 0..self.n_actions {
                    for o in 0..self.n_obs {
                        next.push(self.advance(z, a, o));
                    }
                }
            }
            out = next;
        }
        out.sort();
        out
    }

    pub fn display(&self, z: ZState) -> ZDisplay<'_> {
        ZDisplay { space: self, z }
    }
}

/// Serializes per-step window tables as lists of `[window, value]` pairs,
/// which survive formats without integer map keys.
pub(crate) mod step_tables {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::ZState;

    pub fn serialize<S, V>(tables: &[BTreeMap<ZState, V>], s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        V: Serialize,
    {
        s.collect_seq(tables.iter().map(|t| t.iter().collect::<Vec<_>>()))
    }

    pub fn deserialize<'de, D, V>(d: D) -> Result<Vec<BTreeMap<ZState, V>>, D::Error>
    where
        D: Deserializer<'de>,
        V: Deserialize<'de>,
    {
        let raw: Vec<Vec<(ZState, V)>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|t| t.into_iter().collect()).collect())
    }
}

pub struct ZDisplay<'a> {
    space: &'a ZSpace,
    z: ZState,
}

impl fmt::Display for ZDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, slot) in self.space.slots(self.z).iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            match slot {
                Slot::Pad => write!(f, "_")?,
                Slot::Pair { action, obs } if *obs == self.space.sink_obs() => {
                    write!(f, "({action},⊥)")?
                }
                Slot::Pair { action, obs } => write!(f, "({action},{obs})")?,
            }
        }
        write!(f, "]")
    }
}
