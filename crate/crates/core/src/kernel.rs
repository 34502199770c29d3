//! FIR filter supports.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    /// `|n|_inf <= tau`
    Rect,
    /// `|n|_2 <= tau`
    Ellipsoid,
}

impl std::str::FromStr for KernelShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rect" => Ok(KernelShape::Rect),
            "ellipsoid" => Ok(KernelShape::Ellipsoid),
            other => Err(format!("unknown kernel shape {other:?}")),
        }
    }
}

/// Ordered set of integer offsets. The order (lexicographic, first axis
/// slowest) fixes the column layout of every calibration and W block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSupport {
    shape: KernelShape,
    tau: usize,
    offsets: Vec<Vec<i64>>,
}

impl KernelSupport {
    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn rank(&self) -> usize {
        self.offsets.first().map_or(0, Vec::len)
    }

    pub fn offsets(&self) -> &[Vec<i64>] {
        &self.offsets
    }

    pub fn size(&self) -> usize {
        self.offsets.len()
    }

    pub fn contains(&self, n: &[i64]) -> bool {
        let t = self.tau as i64;
        match self.shape {
            KernelShape::Rect => n.iter().all(|v| v.abs() <= t),
            KernelShape::Ellipsoid => n.iter().map(|v| v * v).sum::<i64>() <= t * t,
        }
    }

    /// Position of `n` in the enumeration order.
    pub fn index_of(&self, n: &[i64]) -> Option<usize> {
        self.offsets.binary_search_by(|o| o.as_slice().cmp(n)).ok()
    }
}

pub fn make_support(shape: KernelShape, tau: usize, rank: usize) -> KernelSupport {
    assert!(rank >= 1, "support needs at least one axis");
    let t = tau as i64;
    let side = 2 * tau + 1;
    let total = side.pow(rank as u32);
    let mut offsets = Vec::new();
    let mut n = vec![0i64; rank];
    for flat in 0..total {
        let mut rem = flat;
        for a in (0..rank).rev() {
            n[a] = (rem % side) as i64 - t;
            rem /= side;
        }
        let keep = match shape {
            KernelShape::Rect => true,
            KernelShape::Ellipsoid => n.iter().map(|v| v * v).sum::<i64>() <= t * t,
        };
        if keep {
            offsets.push(n.clone());
        }
    }
    KernelSupport {
        shape,
        tau,
        offsets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes() {
        assert_eq!(make_support(KernelShape::Rect, 3, 2).size(), 49);
        assert_eq!(make_support(KernelShape::Ellipsoid, 3, 2).size(), 29);
        let z = make_support(KernelShape::Rect, 0, 2);
        assert_eq!(z.offsets(), &[vec![0, 0]]);
        assert_eq!(make_support(KernelShape::Ellipsoid, 0, 3).size(), 1);
    }

    #[test]
    fn ellipsoid_count_by_brute_force() {
        for tau in 0..6i64 {
            let mut count = 0;
            for a in -tau..=tau {
                for b in -tau..=tau {
                    if ((a * a + b * b) as f64).sqrt() <= tau as f64 {
                        count += 1;
                    }
                }
            }
            assert_eq!(make_support(KernelShape::Ellipsoid, tau as usize, 2).size(), count);
        }
    }

    #[test]
    fn order_is_lexicographic() {
        let s = make_support(KernelShape::Rect, 1, 2);
        assert_eq!(s.offsets()[0], vec![-1, -1]);
        assert_eq!(s.offsets()[1], vec![-1, 0]);
        assert_eq!(s.offsets()[4], vec![0, 0]);
        assert_eq!(s.index_of(&[0, 0]), Some(4));
        assert_eq!(s.index_of(&[2, 0]), None);
    }

    proptest! {
        #[test]
        fn support_properties(tau in 0usize..5, rank in 1usize..4) {
            let r = make_support(KernelShape::Rect, tau, rank);
            let e = make_support(KernelShape::Ellipsoid, tau, rank);
            prop_assert_eq!(r.size(), (2 * tau + 1).pow(rank as u32));
            for n in e.offsets() {
                prop_assert!(r.contains(n));
                let neg: Vec<i64> = n.iter().map(|v| -v).collect();
                prop_assert!(e.index_of(&neg).is_some());
            }
            for n in r.offsets() {
                let neg: Vec<i64> = n.iter().map(|v| -v).collect();
                prop_assert!(r.index_of(&neg).is_some());
            }
            prop_assert!(r.offsets().windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(make_support(KernelShape::Ellipsoid, tau, rank), e);
        }
    }
}
