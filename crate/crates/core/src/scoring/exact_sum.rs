//! Exact accumulation of non-negative f32 values.
//!
//! Every finite f32 in [0, 2) is an integer multiple of 2^-149 below 2^150,
//! so a 256-bit fixed-point register sums up to 2^100 of them without
//! rounding. The total is rounded to f64 once, which makes any mean built on
//! it independent of summation order and of uniform duplication of inputs.

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct ExactSum {
    limbs: [u64; 4],
}

/// log2 of the fixed-point unit.
const UNIT_EXP: i32 = -149;

impl ExactSum {
    pub(crate) fn add(&mut self, x: f32) {
        debug_assert!(x.is_finite() && (0.0..2.0).contains(&x), "ExactSum::add({x})");
        let bits = x.to_bits();
        let exp = (bits >> 23) & 0xff;
        let frac = u64::from(bits & 0x7f_ffff);
        let (mant, shift) = if exp == 0 {
            (frac, 0)
        } else {
            (frac | (1 << 23), exp - 1)
        };
        if mant == 0 {
            return;
        }
        let limb = (shift / 64) as usize;
        let off = shift % 64;
        let lo = mant << off;
        let hi = if off == 0 { 0 } else { mant >> (64 - off) };
        self.add_at(limb, lo);
        if hi != 0 {
            self.add_at(limb + 1, hi);
        }
    }

    fn add_at(&mut self, mut limb: usize, value: u64) {
        let mut carry;
        (self.limbs[limb], carry) = self.limbs[limb].overflowing_add(value);
        while carry {
            limb += 1;
            (self.limbs[limb], carry) = self.limbs[limb].overflowing_add(1);
        }
    }

    fn bit(&self, k: u32) -> bool {
        (self.limbs[(k / 64) as usize] >> (k % 64)) & 1 == 1
    }

    fn any_below(&self, k: u32) -> bool {
        let full = (k / 64) as usize;
        if self.limbs[..full].iter().any(|&l| l != 0) {
            return true;
        }
        let rem = k % 64;
        rem > 0 && self.limbs[full] & ((1u64 << rem) - 1) != 0
    }

    /// Correctly rounded (ties to even) conversion to f64.
    pub(crate) fn to_f64(&self) -> f64 {
        let top = match (0..4).rev().find(|&i| self.limbs[i] != 0) {
            None => return 0.0,
            Some(i) => i as u32 * 64 + 63 - self.limbs[i as usize].leading_zeros(),
        };
        if top < 53 {
            let v = self.limbs[0] as f64;
            return v * pow2(UNIT_EXP);
        }
        let low = top - 52;
        let mut mant: u64 = 0;
        for k in (low..=top).rev() {
            mant = (mant << 1) | u64::from(self.bit(k));
        }
        let half = self.bit(low - 1);
        let sticky = self.any_below(low - 1);
        if half && (sticky || mant & 1 == 1) {
            mant += 1;
        }
        mant as f64 * pow2(low as i32 + UNIT_EXP)
    }
}

fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}
