use std::collections::VecDeque;

use rand::Rng;

use super::SelectionMode;
use crate::error::{contract_err, Result};
use crate::tensor::Real;

/// Chooses which cells of one Categorical to attend, in selection order.
pub trait Selector {
    fn select(&mut self, probs: &[Real], count: usize) -> Result<Vec<usize>>;
}

fn check(probs: &[Real], count: usize) -> Result<()> {
    if count > probs.len() {
        return Err(contract_err!("cannot select {count} of {} cells", probs.len()));
    }
    Ok(())
}

/// The `count` most probable cells; ties go to the lower index.
pub fn top_k(probs: &[Real], count: usize) -> Result<Vec<usize>> {
    check(probs, count)?;
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(count);
    Ok(idx)
}

/// Sequential draws without replacement, renormalizing over the cells left.
pub fn sample_without_replacement(probs: &[Real], count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check(probs, count)?;
    let mut taken = vec![false; probs.len()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mass: Real = probs.iter().zip(&taken).filter(|(_, &t)| !t).map(|(p, _)| p).sum();
        let mut u = rng.gen::<Real>() * mass;
        let mut pick = None;
        for (i, (&p, &t)) in probs.iter().zip(&taken).enumerate() {
            if t {
                continue;
            }
            pick = Some(i);
            if u < p {
                break;
            }
            u -= p;
        }
        let i = pick.expect("count <= number of cells");
        taken[i] = true;
        out.push(i);
    }
    Ok(out)
}

pub fn select_locations(probs: &[Real], count: usize, mode: SelectionMode, rng: &mut impl Rng) -> Result<Vec<usize>> {
    match mode {
        SelectionMode::TopK => top_k(probs, count),
        SelectionMode::Sample => sample_without_replacement(probs, count, rng),
    }
}

pub struct TopK;

impl Selector for TopK {
    fn select(&mut self, probs: &[Real], count: usize) -> Result<Vec<usize>> {
        top_k(probs, count)
    }
}

pub struct Sampler<R>(pub R);

impl<R: Rng> Selector for Sampler<R> {
    fn select(&mut self, probs: &[Real], count: usize) -> Result<Vec<usize>> {
        sample_without_replacement(probs, count, &mut self.0)
    }
}

/// Replays predetermined selections, one entry per Categorical in traversal order.
pub struct Forced(pub VecDeque<Vec<usize>>);

impl Forced {
    pub fn new(selections: impl IntoIterator<Item = Vec<usize>>) -> Self {
        Self(selections.into_iter().collect())
    }
}

impl Selector for Forced {
    fn select(&mut self, probs: &[Real], count: usize) -> Result<Vec<usize>> {
        let s = self.0.pop_front().ok_or_else(|| contract_err!("forced selector exhausted"))?;
        check(probs, count)?;
        if s.len() != count || s.iter().any(|&i| i >= probs.len()) {
            return Err(contract_err!("forced selection {s:?} does not fit {count} of {}", probs.len()));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[0.4, 0.3, 0.2, 0.1], 2).unwrap(), vec![0, 1]);
        assert_eq!(top_k(&[0.1, 0.3, 0.3, 0.3], 2).unwrap(), vec![1, 2]);
        let mut all = top_k(&[0.1, 0.2, 0.7], 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(matches!(top_k(&[0.5, 0.5], 3), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn sampling_takes_every_cell_when_count_is_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = sample_without_replacement(&[0.7, 0.2, 0.1], 3, &mut rng).unwrap();
        s.sort();
        assert_eq!(s, vec![0, 1, 2]);
    }

    #[test]
    fn sampling_never_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut s = sample_without_replacement(&[0.9, 0.05, 0.03, 0.02], 3, &mut rng).unwrap();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 3);
        }
    }

    #[test]
    fn forced_replays_in_order() {
        let mut f = Forced::new([vec![2], vec![0, 1]]);
        assert_eq!(f.select(&[0.3; 3], 1).unwrap(), vec![2]);
        assert_eq!(f.select(&[0.3; 3], 2).unwrap(), vec![0, 1]);
        assert!(f.select(&[0.3; 3], 1).is_err());
    }
}
