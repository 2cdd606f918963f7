//! Bit errors on release.

use rand::Rng;
use rand_distr::{Distribution, Geometric};

/// Flips each bit of `payload` independently with probability `ber`.
///
/// Flip positions are drawn as geometric gaps, so cost scales with the
/// number of flips rather than the number of bits.
pub fn apply_ber<R: Rng + ?Sized>(payload: &[u8], ber: f64, rng: &mut R) -> Vec<u8> {
    let mut out = payload.to_vec();
    if !(ber > 0.0) {
        return out;
    }
    if ber >= 1.0 {
        out.iter_mut().for_each(|b| *b = !*b);
        return out;
    }
    let bits = out.len() as u64 * 8;
    let gaps = Geometric::new(ber).expect("ber in (0, 1)");
    let mut pos = 0u64;
    loop {
        pos = pos.saturating_add(gaps.sample(rng));
        if pos >= bits {
            break;
        }
        out[(pos / 8) as usize] ^= 1 << (pos % 8);
        pos += 1;
    }
    out
}

/// Number of differing bits.
pub fn bit_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).map(|(x, y)| u64::from((x ^ y).count_ones())).sum()
}
