//! Permutations, weighted voter profiles, Kendall tau distance and the
//! lexicographic (Cantor) ranking of permutations.
//!
//! Items are `0..m` and a permutation lists them front to back, so
//! `items[k]` is the item shown at position `k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, domain, Error, Result};

/// Largest `m` for which `m!` fits in a `u64`.
pub const MAX_CANTOR_M: usize = 20;

/// A full ordering of the items `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    items: Vec<usize>,
}

impl Permutation {
    /// Validates that `items` is a bijection on `0..items.len()`.
    pub fn new(items: Vec<usize>) -> Result<Self> {
        if items.is_empty() {
            return Err(domain("a permutation needs at least one item"));
        }
        let m = items.len();
        let mut seen = vec![false; m];
        for &it in &items {
            if it >= m {
                return Err(domain(format!("item {it} out of range for m = {m}")));
            }
            if std::mem::replace(&mut seen[it], true) {
                return Err(domain(format!("item {it} appears twice")));
            }
        }
        Ok(Self { items })
    }

    pub fn identity(m: usize) -> Self {
        assert!(m >= 1, "identity permutation needs m >= 1");
        Self {
            items: (0..m).collect(),
        }
    }

    /// Builds the permutation whose inverse is `positions` (item -> position).
    pub fn from_positions(positions: &[usize]) -> Result<Self> {
        let inv = Self::new(positions.to_vec())?;
        Ok(Self {
            items: inv.inverse(),
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.items.len()
    }

    #[inline]
    pub fn items(&self) -> &[usize] {
        &self.items
    }

    /// Position map: `result[item] = position`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut pos = vec![0; self.items.len()];
        for (k, &it) in self.items.iter().enumerate() {
            pos[it] = k;
        }
        pos
    }

    pub fn reversed(&self) -> Self {
        let mut items = self.items.clone();
        items.reverse();
        Self { items }
    }

    /// Applies an item relabeling: item `i` becomes `sigma[i]`.
    pub fn relabel(&self, sigma: &Permutation) -> Result<Self> {
        check_dim(self.m(), sigma.m())?;
        Ok(Self {
            items: self.items.iter().map(|&i| sigma.items[i]).collect(),
        })
    }

    /// Lehmer code, `code[t] = |{s > t : items[s] < items[t]}|`.
    pub fn lehmer_code(&self) -> Vec<usize> {
        let m = self.items.len();
        let mut code = vec![0; m];
        for t in 0..m {
            code[t] = self.items[t + 1..]
                .iter()
                .filter(|&&x| x < self.items[t])
                .count();
        }
        code
    }

    /// Inverse of [`Permutation::lehmer_code`]. Each digit must satisfy
    /// `code[t] <= m - 1 - t`.
    pub fn from_lehmer_code(code: &[usize]) -> Result<Self> {
        let m = code.len();
        if m == 0 {
            return Err(domain("empty Lehmer code"));
        }
        let mut remaining: Vec<usize> = (0..m).collect();
        let mut items = Vec::with_capacity(m);
        for (t, &digit) in code.iter().enumerate() {
            if digit > m - 1 - t {
                return Err(domain(format!(
                    "Lehmer digit {digit} at position {t} exceeds {}",
                    m - 1 - t
                )));
            }
            items.push(remaining.remove(digit));
        }
        Ok(Self { items })
    }

    /// 0-based lexicographic rank among all permutations of `m` items.
    pub fn cantor_encode(&self) -> Result<u64> {
        let m = self.m();
        if m > MAX_CANTOR_M {
            return Err(domain(format!("Cantor code needs m <= {MAX_CANTOR_M}, got {m}")));
        }
        let code = self.lehmer_code();
        let mut rank = 0u64;
        for (t, &digit) in code.iter().enumerate() {
            rank += digit as u64 * factorial(m - 1 - t);
        }
        Ok(rank)
    }

    pub fn cantor_decode(code: u64, m: usize) -> Result<Self> {
        if m == 0 || m > MAX_CANTOR_M {
            return Err(domain(format!("Cantor code needs 1 <= m <= {MAX_CANTOR_M}, got {m}")));
        }
        if code >= factorial(m) {
            return Err(domain(format!("code {code} out of range for m = {m}")));
        }
        let mut rest = code;
        let mut digits = Vec::with_capacity(m);
        for t in 0..m {
            let f = factorial(m - 1 - t);
            digits.push((rest / f) as usize);
            rest %= f;
        }
        Self::from_lehmer_code(&digits)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.items
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, it) in self.items.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{it}")?;
        }
        Ok(())
    }
}

impl FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let items = s
            .split(',')
            .map(|tok| {
                tok.trim().parse::<usize>().map_err(|e| Error::Parse {
                    line: 0,
                    msg: format!("bad item id {tok:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }
}

/// `m!` for `m <= 20`.
pub fn factorial(m: usize) -> u64 {
    assert!(m <= MAX_CANTOR_M, "{m}! overflows u64");
    (1..=m as u64).product()
}

/// Number of item pairs ordered differently by `p` and `q`.
pub fn discordant_pairs(p: &Permutation, q: &Permutation) -> Result<u64> {
    check_dim(p.m(), q.m())?;
    let pos_q = q.inverse();
    let mut seq: Vec<usize> = p.items.iter().map(|&it| pos_q[it]).collect();
    Ok(count_inversions(&mut seq))
}

/// Normalized Kendall tau distance in `[0, 1]`.
///
/// Needs `m >= 2`.
pub fn kendall_tau(p: &Permutation, q: &Permutation) -> Result<f64> {
    let inv = discordant_pairs(p, q)?;
    if p.m() < 2 {
        return Err(domain("Kendall tau needs at least two items"));
    }
    let m = p.m() as f64;
    Ok(2.0 * inv as f64 / (m * (m - 1.0)))
}

/// Counts inversions in `seq`, sorting it as a side effect.
fn count_inversions(seq: &mut [usize]) -> u64 {
    // Insertion counting is faster than merging for short sequences.
    if seq.len() <= 16 {
        let mut inv = 0u64;
        for i in 1..seq.len() {
            let x = seq[i];
            let mut j = i;
            while j > 0 && seq[j - 1] > x {
                seq[j] = seq[j - 1];
                j -= 1;
                inv += 1;
            }
            seq[j] = x;
        }
        return inv;
    }
    let mid = seq.len() / 2;
    let mut inv = count_inversions(&mut seq[..mid]) + count_inversions(&mut seq[mid..]);
    let mut merged = Vec::with_capacity(seq.len());
    let (mut i, mut j) = (0, mid);
    while i < mid && j < seq.len() {
        if seq[i] <= seq[j] {
            merged.push(seq[i]);
            i += 1;
        } else {
            merged.push(seq[j]);
            inv += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&seq[i..mid]);
    merged.extend_from_slice(&seq[j..]);
    seq.copy_from_slice(&merged);
    inv
}

/// One weighted input ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voter {
    pub perm: Permutation,
    pub weight: f64,
}

/// `n` weighted permutations over a common item set.
///
/// Weights are kept exactly as given; use [`VoterProfile::normalized_weights`]
/// for the sum-to-one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterProfile {
    voters: Vec<Voter>,
}

impl VoterProfile {
    pub fn new(voters: Vec<Voter>) -> Result<Self> {
        let first = voters
            .first()
            .ok_or_else(|| domain("a profile needs at least one voter"))?;
        let m = first.perm.m();
        let mut any_positive = false;
        for v in &voters {
            check_dim(m, v.perm.m())?;
            if !v.weight.is_finite() || v.weight < 0.0 {
                return Err(domain(format!("invalid voter weight {}", v.weight)));
            }
            any_positive |= v.weight > 0.0;
        }
        if !any_positive {
            return Err(domain("at least one voter weight must be positive"));
        }
        Ok(Self { voters })
    }

    pub fn from_parts(perms: Vec<Permutation>, weights: &[f64]) -> Result<Self> {
        check_dim(perms.len(), weights.len())?;
        Self::new(
            perms
                .into_iter()
                .zip(weights)
                .map(|(perm, &weight)| Voter { perm, weight })
                .collect(),
        )
    }

    /// Every voter with weight 1.
    pub fn uniform(perms: Vec<Permutation>) -> Result<Self> {
        let w = vec![1.0; perms.len()];
        Self::from_parts(perms, &w)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.voters.len()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.voters[0].perm.m()
    }

    pub fn voters(&self) -> &[Voter] {
        &self.voters
    }

    pub fn perms(&self) -> impl Iterator<Item = &Permutation> + '_ {
        self.voters.iter().map(|v| &v.perm)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.voters.iter().map(|v| v.weight).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.voters.iter().map(|v| v.weight).sum()
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let total = self.total_weight();
        self.voters.iter().map(|v| v.weight / total).collect()
    }

    /// Same permutations with replaced weights.
    pub fn reweighted(&self, weights: &[f64]) -> Result<Self> {
        Self::from_parts(self.perms().cloned().collect(), weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[usize]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(p(&[0, 1, 2]).inverse(), vec![0, 1, 2]);
        assert_eq!(p(&[2, 0, 1]).inverse(), vec![1, 2, 0]);
        let q = p(&[3, 1, 0, 2]);
        assert_eq!(Permutation::from_positions(&q.inverse()).unwrap(), q);
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(Permutation::new(vec![]).is_err());
        assert!("0,1,x".parse::<Permutation>().is_err());
    }

    #[test]
    fn text_form() {
        let q: Permutation = "2, 0,1".parse().unwrap();
        assert_eq!(q, p(&[2, 0, 1]));
        assert_eq!(q.to_string(), "2,0,1");
    }

    #[test]
    fn kendall_tau_examples() {
        let id = Permutation::identity(3);
        assert_eq!(kendall_tau(&id, &id).unwrap(), 0.0);
        assert!((kendall_tau(&id, &p(&[1, 0, 2])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for m in 2..12 {
            let id = Permutation::identity(m);
            assert_eq!(kendall_tau(&id, &id.reversed()).unwrap(), 1.0);
        }
        let one = Permutation::identity(1);
        assert!(matches!(kendall_tau(&one, &one), Err(Error::Domain { .. })));
    }

    #[test]
    fn kendall_tau_dimension_mismatch() {
        let err = kendall_tau(&Permutation::identity(3), &Permutation::identity(4));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn lehmer_code_examples() {
        assert_eq!(p(&[2, 1, 0]).lehmer_code(), vec![2, 1, 0]);
        assert_eq!(p(&[0, 1, 2]).lehmer_code(), vec![0, 0, 0]);
        assert!(Permutation::from_lehmer_code(&[0, 2, 0]).is_err());
    }

    #[test]
    fn cantor_examples() {
        assert_eq!(p(&[0, 1, 2]).cantor_encode().unwrap(), 0);
        assert_eq!(p(&[2, 1, 0]).cantor_encode().unwrap(), 5);
        assert_eq!(Permutation::cantor_decode(2, 3).unwrap(), p(&[1, 0, 2]));
        assert!(Permutation::cantor_decode(6, 3).is_err());
        assert!(Permutation::cantor_decode(0, 21).is_err());
        assert!(Permutation::identity(21).cantor_encode().is_err());
        let last = Permutation::identity(20).reversed();
        assert_eq!(last.cantor_encode().unwrap(), factorial(20) - 1);
    }

    #[test]
    fn profile_validation() {
        let a = Permutation::identity(3);
        assert!(VoterProfile::from_parts(vec![a.clone()], &[0.0]).is_err());
        assert!(VoterProfile::from_parts(vec![a.clone()], &[-1.0]).is_err());
        assert!(VoterProfile::from_parts(vec![a.clone(), Permutation::identity(2)], &[1.0, 1.0]).is_err());
        assert!(VoterProfile::new(vec![]).is_err());
        let prof = VoterProfile::from_parts(vec![a.clone(), a], &[1.0, 3.0]).unwrap();
        assert_eq!(prof.weights(), vec![1.0, 3.0]);
        assert_eq!(prof.normalized_weights(), vec![0.25, 0.75]);
    }
}
