//! Attention masks over `L·N` tokens, token index `(t, u) = t·N + u`.
//!
//! * [`build_base_mask`]: block-causal across timesteps, fully connected
//!   within a timestep. Used for centralized execution.
//! * [`sample_training_mask`]: the base mask with non-self entries dropped
//!   independently per (query unit, key unit, key timestep).
//! * [`build_local_mask`]: each unit attends only to units it could see at
//!   the key's timestep. Used for decentralized execution and the local
//!   mask ablation.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("context length and unit count must be positive (L={l}, N={n})")]
    EmptyShape { l: usize, n: usize },
    #[error("mask ratio {0} outside [0, 1]")]
    Ratio(f64),
    #[error("visibility set has no entry for timestep {t}, unit {unit}")]
    MissingVisibility { t: usize, unit: usize },
    #[error("visibility of unit {unit} at timestep {t} references unit {other} (N={n})")]
    BadVisibility { t: usize, unit: usize, other: usize, n: usize },
}

/// Dense boolean `(L·N)×(L·N)` matrix; row = query token, column = key token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    l: usize,
    n: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn timesteps(&self) -> usize {
        self.l
    }

    pub fn units(&self) -> usize {
        self.n
    }

    pub fn tokens(&self) -> usize {
        self.l * self.n
    }

    pub fn token(&self, t: usize, u: usize) -> usize {
        t * self.n + u
    }

    pub fn get(&self, t: usize, i: usize, t2: usize, j: usize) -> bool {
        self.allow[self.token(t, i) * self.tokens() + self.token(t2, j)]
    }

    pub fn allow(&self) -> &[bool] {
        &self.allow
    }

    pub fn count_allowed(&self) -> usize {
        self.allow.iter().filter(|a| **a).count()
    }

    /// True iff every allowed entry here is also allowed in `other`.
    pub fn is_subset_of(&self, other: &AttentionMask) -> bool {
        self.allow.len() == other.allow.len() && self.allow.iter().zip(&other.allow).all(|(a, b)| !a || *b)
    }

    /// Restricts the mask to tokens flagged present. Absent tokens (left
    /// padding, units not yet inserted) attend only to themselves and are
    /// hidden from every other row.
    pub fn apply_presence(&mut self, present: &[bool]) {
        let tokens = self.tokens();
        debug_assert_eq!(present.len(), tokens);
        for q in 0..tokens {
            for k in 0..tokens {
                if q == k {
                    continue;
                }
                if !present[q] || !present[k] {
                    self.allow[q * tokens + k] = false;
                }
            }
        }
    }

    /// Sub-matrix over a subset of tokens (rows and columns both restricted).
    pub fn restrict(&self, tokens: &[usize]) -> Vec<bool> {
        let total = self.tokens();
        let mut out = Vec::with_capacity(tokens.len() * tokens.len());
        for &q in tokens {
            for &k in tokens {
                out.push(self.allow[q * total + k]);
            }
        }
        out
    }

    /// Rows `rows` against all columns.
    pub fn rows(&self, rows: &[usize]) -> Vec<bool> {
        let total = self.tokens();
        let mut out = Vec::with_capacity(rows.len() * total);
        for &q in rows {
            out.extend_from_slice(&self.allow[q * total..(q + 1) * total]);
        }
        out
    }
}

/// Per-timestep, per-unit sets `p^t_i` of visible unit indices.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct VisibilitySet {
    sets: Vec<Vec<Vec<usize>>>,
}

impl VisibilitySet {
    /// Takes `sets[t][i]`; each set is sorted and deduplicated, and `i` is
    /// inserted if missing.
    pub fn new(mut sets: Vec<Vec<Vec<usize>>>) -> Self {
        for step in &mut sets {
            for (i, s) in step.iter_mut().enumerate() {
                s.push(i);
                s.sort_unstable();
                s.dedup();
            }
        }
        Self { sets }
    }

    /// Every unit sees every unit at every timestep.
    pub fn full(l: usize, n: usize) -> Self {
        Self { sets: vec![vec![(0..n).collect(); n]; l] }
    }

    /// Every unit sees only itself.
    pub fn own_only(l: usize, n: usize) -> Self {
        Self { sets: vec![(0..n).map(|i| vec![i]).collect(); l] }
    }

    pub fn timesteps(&self) -> usize {
        self.sets.len()
    }

    pub fn get(&self, t: usize, i: usize) -> Option<&[usize]> {
        self.sets.get(t).and_then(|s| s.get(i)).map(Vec::as_slice)
    }

    pub fn sees(&self, t: usize, i: usize, j: usize) -> bool {
        self.get(t, i).is_some_and(|s| s.binary_search(&j).is_ok())
    }

    pub fn step(&self, t: usize) -> &[Vec<usize>] {
        &self.sets[t]
    }

    pub fn into_sets(self) -> Vec<Vec<Vec<usize>>> {
        self.sets
    }
}

fn check_shape(l: usize, n: usize) -> Result<(), MaskError> {
    if l == 0 || n == 0 {
        Err(MaskError::EmptyShape { l, n })
    } else {
        Ok(())
    }
}

/// Block-causal mask `m1`: `(t,i)` may attend to `(t',j)` iff `t' <= t`.
pub fn build_base_mask(l: usize, n: usize) -> Result<AttentionMask, MaskError> {
    check_shape(l, n)?;
    let tokens = l * n;
    let mut allow = vec![false; tokens * tokens];
    for q in 0..tokens {
        let t = q / n;
        // key tokens of timesteps 0..=t are exactly the first (t+1)·n columns
        allow[q * tokens..q * tokens + (t + 1) * n].iter_mut().for_each(|a| *a = true);
    }
    Ok(AttentionMask { l, n, allow })
}

/// Training mask `m2`: each non-self (query unit `i`, key unit `j`, key
/// timestep `t'`) link allowed in `base` survives with probability
/// `1 - ratio`, the same draw applying to every query timestep. Self links
/// are never dropped and nothing outside `base` is added.
pub fn sample_training_mask<R: Rng + ?Sized>(
    base: &AttentionMask,
    ratio: f64,
    rng: &mut R,
) -> Result<AttentionMask, MaskError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MaskError::Ratio(ratio));
    }
    let (l, n) = (base.l, base.n);
    // keep[(i·n + j)·l + t']
    let mut keep = vec![true; n * n * l];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for t2 in 0..l {
                keep[(i * n + j) * l + t2] = rng.gen::<f64>() >= ratio;
            }
        }
    }
    let tokens = base.tokens();
    let mut allow = base.allow.clone();
    for q in 0..tokens {
        let i = q % n;
        for k in 0..tokens {
            let (t2, j) = (k / n, k % n);
            if allow[q * tokens + k] && !keep[(i * n + j) * l + t2] {
                allow[q * tokens + k] = false;
            }
        }
    }
    Ok(AttentionMask { l, n, allow })
}

/// Mask ratio for the "random" training mode: uniform on `[0, 1]`.
pub fn sample_ratio<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(0.0..=1.0)
}

/// Locality mask: `(t,i)` attends to `(t',j)` iff `t' <= t` and `j ∈ p^{t'}_i`.
pub fn build_local_mask(vis: &VisibilitySet, l: usize, n: usize) -> Result<AttentionMask, MaskError> {
    check_shape(l, n)?;
    for t in 0..l {
        for i in 0..n {
            let set = vis.get(t, i).ok_or(MaskError::MissingVisibility { t, unit: i })?;
            if let Some(&other) = set.iter().find(|&&j| j >= n) {
                return Err(MaskError::BadVisibility { t, unit: i, other, n });
            }
        }
    }
    let tokens = l * n;
    let mut allow = vec![false; tokens * tokens];
    for q in 0..tokens {
        let (t, i) = (q / n, q % n);
        for t2 in 0..=t {
            for &j in vis.get(t2, i).unwrap_or(&[]) {
                allow[q * tokens + t2 * n + j] = true;
            }
        }
    }
    Ok(AttentionMask { l, n, allow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(m: &AttentionMask) -> Vec<Vec<u8>> {
        let t = m.tokens();
        (0..t).map(|q| (0..t).map(|k| m.allow[q * t + k] as u8).collect()).collect()
    }

    #[test]
    fn base_mask_examples() {
        let m = build_base_mask(1, 3).unwrap();
        assert!(m.allow().iter().all(|a| *a));
        let m = build_base_mask(2, 2).unwrap();
        assert_eq!(dense(&m), vec![vec![1, 1, 0, 0], vec![1, 1, 0, 0], vec![1, 1, 1, 1], vec![1, 1, 1, 1]]);
        // brute force: Σ_{t=1..3} t·N·N with N = 2
        let expected: usize = (1..=3).map(|t| t * 2 * 2).sum();
        assert_eq!(expected, 24);
        assert_eq!(build_base_mask(3, 2).unwrap().count_allowed(), expected);
        assert_eq!(build_base_mask(0, 2).unwrap_err(), MaskError::EmptyShape { l: 0, n: 2 });
        assert!(build_base_mask(2, 0).is_err());
    }

    #[test]
    fn training_mask_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = build_base_mask(3, 3).unwrap();
        assert_eq!(sample_training_mask(&base, 0.0, &mut rng).unwrap(), base);
        let m = sample_training_mask(&base, 1.0, &mut rng).unwrap();
        for t in 0..3 {
            for i in 0..3 {
                for t2 in 0..3 {
                    for j in 0..3 {
                        assert_eq!(m.get(t, i, t2, j), i == j && t2 <= t);
                    }
                }
            }
        }
        assert_eq!(sample_training_mask(&base, 1.5, &mut rng).unwrap_err(), MaskError::Ratio(1.5));
        assert!(sample_training_mask(&base, -0.1, &mut rng).is_err());
    }

    #[test]
    fn training_mask_keep_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = build_base_mask(2, 4).unwrap();
        let (mut kept, mut total) = (0usize, 0usize);
        for _ in 0..10_000 {
            let m = sample_training_mask(&base, 0.5, &mut rng).unwrap();
            assert!(m.is_subset_of(&base));
            for q in 0..8 {
                for k in 0..8 {
                    if q % 4 != k % 4 && base.allow[q * 8 + k] {
                        total += 1;
                        kept += m.allow[q * 8 + k] as usize;
                    }
                }
            }
        }
        let rate = kept as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.02, "keep rate {rate}");
    }

    #[test]
    fn ratio_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..10_000).map(|_| sample_ratio(&mut rng)).collect();
        assert!(draws.iter().all(|r| (0.0..=1.0).contains(r)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            assert_eq!(sample_ratio(&mut a), sample_ratio(&mut b));
        }
    }

    #[test]
    fn local_mask_examples() {
        assert_eq!(build_local_mask(&VisibilitySet::full(3, 4), 3, 4).unwrap(), build_base_mask(3, 4).unwrap());
        let m = build_local_mask(&VisibilitySet::own_only(2, 3), 2, 3).unwrap();
        for q in 0..6 {
            for k in 0..6 {
                assert_eq!(m.allow[q * 6 + k], q % 3 == k % 3 && k / 3 <= q / 3);
            }
        }
        // 1-indexed p_1={1,2}, p_2={2}, p_3={1,3}, constant over t
        let step = vec![vec![0, 1], vec![1], vec![0, 2]];
        let vis = VisibilitySet::new(vec![step.clone(), step]);
        let m = build_local_mask(&vis, 2, 3).unwrap();
        let row = m.token(1, 0);
        let allowed: Vec<usize> = (0..6).filter(|&k| m.allow[row * 6 + k]).collect();
        assert_eq!(allowed, vec![0, 1, 3, 4]);
    }

    #[test]
    fn local_mask_errors() {
        let vis = VisibilitySet::new(vec![vec![vec![0], vec![1]]]);
        assert_eq!(
            build_local_mask(&vis, 2, 2).unwrap_err(),
            MaskError::MissingVisibility { t: 1, unit: 0 }
        );
        let vis = VisibilitySet::new(vec![vec![vec![0, 5], vec![1]]]);
        assert!(matches!(build_local_mask(&vis, 1, 2), Err(MaskError::BadVisibility { other: 5, .. })));
    }

    #[test]
    fn presence_hides_absent_tokens() {
        let mut m = build_base_mask(2, 2).unwrap();
        m.apply_presence(&[false, false, true, true]);
        assert_eq!(dense(&m), vec![vec![1, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 1, 1], vec![0, 0, 1, 1]]);
    }
}
