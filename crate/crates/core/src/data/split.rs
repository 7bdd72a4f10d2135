use rand::seq::SliceRandom;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::autodiff::hex_digest;
use crate::autodiff::nn::SeedRng;

/// Sequence indices assigned to train, validation and test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle, then 70% / 15% / 15%. Validation and test each get at
    /// least one sequence whenever there are three or more.
    pub fn new(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut SeedRng::seed_from_u64(seed ^ 0x5eed_0517));
        let held = if n >= 3 { ((n as f64 * 0.15).round() as usize).max(1) } else { 0 };
        let test = idx.split_off(n - held);
        let val = idx.split_off(n - 2 * held);
        let (mut train, mut val, mut test) = (idx, val, test);
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Split { train, val, test }
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (tag, part) in [(b't', &self.train), (b'v', &self.val), (b'e', &self.test)] {
            h.update([tag]);
            for i in part {
                h.update((*i as u64).to_le_bytes());
            }
        }
        hex_digest(&h.finalize())
    }
}
