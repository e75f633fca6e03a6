//! GF(2^8) arithmetic with reduction polynomial x^8 + x^4 + x^3 + x^2 + 1.

const POLY: u16 = 0x11D;

struct Tables {
    exp: [u8; 512],
    log: [u8; 256],
}

const fn build() -> Tables {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        exp[i + 255] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    Tables { exp, log }
}

static TABLES: Tables = build();

#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    TABLES.exp[TABLES.log[a as usize] as usize + TABLES.log[b as usize] as usize]
}

/// Multiplicative inverse. Panics on zero.
#[inline]
pub fn inv(a: u8) -> u8 {
    assert!(a != 0, "zero has no inverse in GF(256)");
    TABLES.exp[255 - TABLES.log[a as usize] as usize]
}

/// Split-nibble product tables for a fixed coefficient: `c * x = lo[x & 15] ^ hi[x >> 4]`.
#[derive(Clone, Copy)]
pub struct MulTable {
    lo: [u8; 16],
    hi: [u8; 16],
}

impl MulTable {
    pub fn new(c: u8) -> Self {
        let mut lo = [0u8; 16];
        let mut hi = [0u8; 16];
        for i in 0..16u8 {
            lo[i as usize] = mul(c, i);
            hi[i as usize] = mul(c, i << 4);
        }
        Self { lo, hi }
    }
}

/// `dst[i] ^= c * src[i]` for every byte.
pub fn mul_add(dst: &mut [u8], src: &[u8], c: u8) {
    assert_eq!(dst.len(), src.len());
    match c {
        0 => {}
        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s),
        _ => mul_add_table(dst, src, &MulTable::new(c)),
    }
}

pub fn mul_add_table(dst: &mut [u8], src: &[u8], t: &MulTable) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was just checked.
            unsafe { x86::mul_add_avx2(dst, src, t) };
            return;
        }
    }
    mul_add_scalar(dst, src, t);
}

pub fn mul_add_scalar(dst: &mut [u8], src: &[u8], t: &MulTable) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d ^= t.lo[(s & 15) as usize] ^ t.hi[(s >> 4) as usize];
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::{mul_add_scalar, MulTable};
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2")]
    pub unsafe fn mul_add_avx2(dst: &mut [u8], src: &[u8], t: &MulTable) {
        let n = dst.len().min(src.len());
        let lo = _mm256_broadcastsi128_si256(_mm_loadu_si128(t.lo.as_ptr() as *const __m128i));
        let hi = _mm256_broadcastsi128_si256(_mm_loadu_si128(t.hi.as_ptr() as *const __m128i));
        let mask = _mm256_set1_epi8(0x0f);
        let mut i = 0;
        while i + 32 <= n {
            let s = _mm256_loadu_si256(src.as_ptr().add(i) as *const __m256i);
            let d = _mm256_loadu_si256(dst.as_ptr().add(i) as *const __m256i);
            let l = _mm256_shuffle_epi8(lo, _mm256_and_si256(s, mask));
            let h = _mm256_shuffle_epi8(hi, _mm256_and_si256(_mm256_srli_epi64(s, 4), mask));
            let r = _mm256_xor_si256(d, _mm256_xor_si256(l, h));
            _mm256_storeu_si256(dst.as_mut_ptr().add(i) as *mut __m256i, r);
            i += 32;
        }
        mul_add_scalar(&mut dst[i..n], &src[i..n], t);
    }
}

/// Inverts a square matrix in place by Gauss-Jordan elimination. Returns
/// `false` when it is singular.
pub fn invert(m: &mut [Vec<u8>]) -> bool {
    let n = m.len();
    let mut inv: Vec<Vec<u8>> = (0..n).map(|i| (0..n).map(|j| u8::from(i == j)).collect()).collect();
    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| m[r][col] != 0) else {
            return false;
        };
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let scale = self::inv(m[col][col]);
        for j in 0..n {
            m[col][j] = mul(m[col][j], scale);
            inv[col][j] = mul(inv[col][j], scale);
        }
        for row in 0..n {
            let f = m[row][col];
            if row == col || f == 0 {
                continue;
            }
            for j in 0..n {
                let (a, b) = (m[col][j], inv[col][j]);
                m[row][j] ^= mul(f, a);
                inv[row][j] ^= mul(f, b);
            }
        }
    }
    m.clone_from_slice(&inv);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Carry-less multiply with bitwise reduction, independent of the tables.
    fn slow_mul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let carry = a & 0x80 != 0;
            a <<= 1;
            if carry {
                a ^= (POLY & 0xff) as u8;
            }
            b >>= 1;
        }
        p
    }

    #[test]
    fn mul_matches_bitwise() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), slow_mul(a, b));
            }
        }
    }

    #[test]
    fn inverses() {
        for a in 1..=255u8 {
            assert_eq!(mul(a, inv(a)), 1);
        }
    }

    #[test]
    fn simd_matches_scalar() {
        let src: Vec<u8> = (0..1000u32).map(|i| (i * 37 + 11) as u8).collect();
        for c in [0u8, 1, 2, 0x53, 0xff] {
            let mut a: Vec<u8> = (0..1000u32).map(|i| (i * 7) as u8).collect();
            let mut b = a.clone();
            mul_add(&mut a, &src, c);
            for (d, &s) in b.iter_mut().zip(&src) {
                *d ^= slow_mul(c, s);
            }
            assert_eq!(a, b, "c = {c}");
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn invert_round_trip() {
        let orig: Vec<Vec<u8>> = (0..4).map(|i| (0..4).map(|j| inv((i as u8 + 4) ^ j as u8)).collect()).collect();
        let mut m = orig.clone();
        assert!(invert(&mut m));
        for i in 0..4 {
            for j in 0..4 {
                let dot = (0..4).fold(0u8, |acc, t| acc ^ mul(orig[i][t], m[t][j]));
                assert_eq!(dot, u8::from(i == j));
            }
        }
        let mut singular = vec![vec![1u8, 2], vec![1, 2]];
        assert!(!invert(&mut singular));
    }
}
