use serde::{Deserialize, Serialize};

/// An observable history `(a_{1:h-1}, o_{2:h})` at step `h = len + 1`.
///
/// `actions[i]` is `a_{i+1}` and `observations[i]` is `o_{i+2}`, so the
/// two vectors always have the same length.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct History {
    pub actions: Vec<usize>,
    pub observations: Vec<usize>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        let (actions, observations) = pairs.iter().copied().unzip();
        History {
            actions,
            observations,
        }
    }

    /// Current step `h`.
    pub fn step(&self) -> usize {
        self.actions.len() + 1
    }

    pub fn push(&mut self, action: usize, obs: usize) {
        self.actions.push(action);
        self.observations.push(obs);
    }

    pub fn pop(&mut self) {
        self.actions.pop();
        self.observations.pop();
    }

    /// The `(a_t, o_{t+1})` pairs, oldest first.
    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = (usize, usize)> + ExactSizeIterator + '_ {
        self.actions.iter().copied().zip(self.observations.iter().copied())
    }

    /// Prefix ending at step `h`.
    pub fn prefix(&self, h: usize) -> History {
        History {
            actions: self.actions[..h - 1].to_vec(),
            observations: self.observations[..h - 1].to_vec(),
        }
    }
}
