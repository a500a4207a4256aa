//! Sub-seed derivation from one root seed.

/// FNV-1a over the stage name, mixed with the root through SplitMix64.
pub fn derive(root: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(root ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_differ_and_are_stable() {
        assert_eq!(derive(42, "split"), derive(42, "split"));
        assert_ne!(derive(42, "split"), derive(42, "stacking-cv"));
        assert_ne!(derive(42, "split"), derive(43, "split"));
    }
}
