//! Run-length encoding of binary masks for the HTTP wire.
//!
//! Runs alternate background/foreground over a row-major scan and always
//! start with a (possibly zero-length) background run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::MaskPlane;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<u64>,
}

pub fn rle_encode(m: &MaskPlane) -> RleMask {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut len = 0u64;
    for &b in m.bits() {
        if b != current {
            runs.push(len);
            current = b;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    RleMask {
        height: m.height,
        width: m.width,
        runs,
    }
}

pub fn rle_decode(r: &RleMask) -> Result<MaskPlane> {
    let total = r.height * r.width;
    let sum: u64 = r.runs.iter().sum();
    if sum != total as u64 {
        return Err(Error::Wire(format!(
            "runs sum to {sum}, expected {} ({}x{})",
            total, r.height, r.width
        )));
    }
    let mut bits = Vec::with_capacity(total);
    for (i, &run) in r.runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n((i % 2) as u8, run as usize));
    }
    MaskPlane::new(r.height, r.width, bits)
}

impl From<&MaskPlane> for RleMask {
    fn from(m: &MaskPlane) -> Self {
        rle_encode(m)
    }
}

impl TryFrom<&RleMask> for MaskPlane {
    type Error = Error;

    fn try_from(r: &RleMask) -> Result<Self> {
        rle_decode(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_masks() {
        assert_eq!(rle_encode(&MaskPlane::empty(2, 3)).runs, vec![6]);
        let ones = MaskPlane::new(2, 3, vec![1; 6]).unwrap();
        assert_eq!(rle_encode(&ones).runs, vec![0, 6]);
        let mixed = MaskPlane::new(2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap();
        assert_eq!(rle_encode(&mixed).runs, vec![1, 2, 2, 1]);
    }

    #[test]
    fn decode_rejects_bad_sum() {
        let r = RleMask {
            height: 2,
            width: 3,
            runs: vec![2, 3],
        };
        assert!(matches!(rle_decode(&r), Err(Error::Wire(_))));
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let (h, w) = (rng.gen_range(1..20), rng.gen_range(1..20));
            let p = rng.gen::<f64>();
            let m = MaskPlane::from_fn(h, w, |_, _| rng.gen_bool(p));
            let r = rle_encode(&m);
            assert_eq!(rle_decode(&r).unwrap(), m);
            assert_eq!(rle_encode(&rle_decode(&r).unwrap()), r);
        }
    }
}
