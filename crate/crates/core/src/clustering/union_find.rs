use std::collections::HashMap;

use crate::error::{Error, Result};

/// Disjoint sets over `0..n` with path compression and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Components as index lists, each sorted, ordered by smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: HashMap<usize, usize> = HashMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            let slot = *by_root.entry(r).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[slot].push(i);
        }
        out
    }
}

/// Connected components of `ids` under `positive_pairs`. Components are
/// sorted internally and ordered by their smallest id.
pub fn link_merges(positive_pairs: &[(u64, u64)], ids: &[u64]) -> Result<Vec<Vec<u64>>> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let index: HashMap<u64, usize> = sorted.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut uf = UnionFind::new(sorted.len());
    for &(a, b) in positive_pairs {
        let ia = *index.get(&a).ok_or(Error::UnknownTrack(a))?;
        let ib = *index.get(&b).ok_or(Error::UnknownTrack(b))?;
        uf.union(ia, ib);
    }
    Ok(uf
        .components()
        .into_iter()
        .map(|c| c.into_iter().map(|i| sorted[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn no_pairs_gives_singletons() {
        assert_eq!(
            link_merges(&[], &[3, 1, 2]).unwrap(),
            vec![vec![1], vec![2], vec![3]]
        );
    }

    #[test]
    fn chains_are_closed_transitively() {
        assert_eq!(
            link_merges(&[(1, 2), (2, 3)], &[1, 2, 3, 4]).unwrap(),
            vec![vec![1, 2, 3], vec![4]]
        );
    }

    #[test]
    fn unknown_ids_are_errors() {
        assert!(matches!(
            link_merges(&[(1, 9)], &[1, 2]),
            Err(Error::UnknownTrack(9))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn pair_order_does_not_matter(
            pairs in prop::collection::vec((0u64..12, 0u64..12), 0..20),
            seed in any::<u64>(),
        ) {
            let ids: Vec<u64> = (0..12).collect();
            let mut shuffled = pairs.clone();
            // deterministic permutation from the seed
            let n = shuffled.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            let flipped: Vec<(u64, u64)> = shuffled.iter().map(|&(a, b)| (b, a)).collect();
            let base = link_merges(&pairs, &ids).unwrap();
            prop_assert_eq!(&base, &link_merges(&flipped, &ids).unwrap());
            let total: usize = base.iter().map(Vec::len).sum();
            prop_assert_eq!(total, 12);
        }
    }
}
