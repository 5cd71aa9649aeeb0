//! Truncated Hilbert space `atom ⊗ V-Fock ⊗ H-Fock`.
//!
//! Basis ordering is fixed: the atom index is the slowest, the H photon number
//! the fastest varying factor,
//!
//! ```text
//! index = (level * (n_max_v + 1) + n_v) * (n_max_h + 1) + n_h
//! ```
//!
//! with levels ordered `g-, g0, g+, e-, e0, e+`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ATOM_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    GMinus,
    G0,
    GPlus,
    EMinus,
    E0,
    EPlus,
}

impl Level {
    pub const ALL: [Level; ATOM_DIM] = [
        Level::GMinus,
        Level::G0,
        Level::GPlus,
        Level::EMinus,
        Level::E0,
        Level::EPlus,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Self::ALL.get(i).copied()
    }

    /// Magnetic quantum number in the reduced scheme.
    pub fn m(self) -> i32 {
        (self.index() % 3) as i32 - 1
    }

    pub fn is_excited(self) -> bool {
        self.index() >= 3
    }

    pub fn ground(m: i32) -> Option<Level> {
        (-1..=1).contains(&m).then(|| Self::ALL[(m + 1) as usize])
    }

    pub fn excited(m: i32) -> Option<Level> {
        (-1..=1).contains(&m).then(|| Self::ALL[(m + 4) as usize])
    }
}

/// One basis vector `|level, n_v, n_h⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub level: Level,
    pub n_v: usize,
    pub n_h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpace {
    n_max_v: usize,
    n_max_h: usize,
}

impl HilbertSpace {
    /// Builds the space with the given photon-number truncations.
    pub fn new(n_max_v: usize, n_max_h: usize) -> Result<Self> {
        if n_max_v == 0 || n_max_h == 0 {
            return Err(Error::Config(format!(
                "photon truncations must be at least 1, got ({n_max_v}, {n_max_h})"
            )));
        }
        Ok(Self { n_max_v, n_max_h })
    }

    pub fn n_max_v(&self) -> usize {
        self.n_max_v
    }

    pub fn n_max_h(&self) -> usize {
        self.n_max_h
    }

    pub fn dim_v(&self) -> usize {
        self.n_max_v + 1
    }

    pub fn dim_h(&self) -> usize {
        self.n_max_h + 1
    }

    pub fn dim(&self) -> usize {
        ATOM_DIM * self.dim_v() * self.dim_h()
    }

    pub fn index(&self, s: BasisState) -> usize {
        debug_assert!(s.n_v <= self.n_max_v && s.n_h <= self.n_max_h);
        (s.level.index() * self.dim_v() + s.n_v) * self.dim_h() + s.n_h
    }

    pub fn index_of(&self, level: Level, n_v: usize, n_h: usize) -> usize {
        self.index(BasisState { level, n_v, n_h })
    }

    pub fn state(&self, index: usize) -> BasisState {
        assert!(index < self.dim(), "basis index {index} out of range");
        let n_h = index % self.dim_h();
        let rest = index / self.dim_h();
        let n_v = rest % self.dim_v();
        let level = Level::ALL[rest / self.dim_v()];
        BasisState { level, n_v, n_h }
    }

    pub fn states(&self) -> impl Iterator<Item = BasisState> + '_ {
        (0..self.dim()).map(|i| self.state(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        assert_eq!(HilbertSpace::new(1, 1).unwrap().dim(), 24);
        assert_eq!(HilbertSpace::new(2, 2).unwrap().dim(), 54);
        assert_eq!(HilbertSpace::new(3, 1).unwrap().dim(), 6 * 4 * 2);
    }

    #[test]
    fn zero_truncation_is_rejected() {
        assert!(matches!(HilbertSpace::new(0, 2), Err(Error::Config(_))));
        assert!(matches!(HilbertSpace::new(2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn index_round_trip() {
        let space = HilbertSpace::new(2, 2).unwrap();
        for i in 0..space.dim() {
            assert_eq!(space.index(space.state(i)), i);
        }
        let mut seen = std::collections::HashSet::new();
        for s in space.states() {
            assert!(seen.insert(s));
        }
        assert_eq!(seen.len(), 54);
    }

    #[test]
    fn level_quantum_numbers() {
        assert_eq!(Level::GMinus.m(), -1);
        assert_eq!(Level::E0.m(), 0);
        assert_eq!(Level::EPlus.m(), 1);
        assert_eq!(Level::ground(1), Some(Level::GPlus));
        assert_eq!(Level::excited(-1), Some(Level::EMinus));
        assert_eq!(Level::excited(2), None);
    }
}
