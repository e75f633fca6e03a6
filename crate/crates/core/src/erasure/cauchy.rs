//! Systematic Cauchy code over GF(256).
//!
//! EFIs `0..k` are the source fragments. Repair EFI `k + p` is
//! `sum_i C[p][i] * src_i` with `C[p][i] = (k + p) / ((k + p) ^ i)`: a Cauchy
//! matrix with each row scaled so that column 0 is all ones. Every square
//! submatrix stays invertible, which gives the MDS property, and `k = 1`
//! degenerates to plain replication.

use super::gf256::{self, MulTable};
use super::{CodecError, Efi};

#[derive(Clone)]
pub struct CauchyCodec {
    k: usize,
    n: usize,
    /// `coef[p][i]`, row-major over `r` repair rows.
    coef: Vec<Vec<u8>>,
    tables: Vec<Vec<MulTable>>,
}

impl std::fmt::Debug for CauchyCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CauchyCodec").field("k", &self.k).field("n", &self.n).finish()
    }
}

impl CauchyCodec {
    pub const MAX_N: usize = 256;

    pub fn new(k: usize, n: usize) -> Result<Self, CodecError> {
        if k == 0 || k > n {
            return Err(CodecError::BadParams(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
        }
        if n > Self::MAX_N {
            return Err(CodecError::TooManyFragments { n, max: Self::MAX_N });
        }
        let coef: Vec<Vec<u8>> = (0..n - k)
            .map(|p| {
                let x = (k + p) as u8;
                (0..k).map(|i| gf256::mul(x, gf256::inv(x ^ i as u8))).collect()
            })
            .collect();
        let tables = coef.iter().map(|row| row.iter().map(|&c| MulTable::new(c)).collect()).collect();
        Ok(Self { k, n, coef, tables })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Computes the fragment with the given EFI from all `k` source fragments.
    pub fn encode_one(&self, sources: &[&[u8]], efi: Efi) -> Result<Vec<u8>, CodecError> {
        let efi = efi as usize;
        if efi >= self.n {
            return Err(CodecError::UnknownEfi { efi: efi as Efi, n: self.n as u32 });
        }
        if efi < self.k {
            return Ok(sources[efi].to_vec());
        }
        let p = efi - self.k;
        let mut out = vec![0u8; sources[0].len()];
        for (i, src) in sources.iter().enumerate() {
            gf256::mul_add_table(&mut out, src, &self.tables[p][i]);
        }
        Ok(out)
    }

    /// Rebuilds all `k` source fragments from at least `k` fragments with
    /// distinct EFIs. Duplicate EFIs are ignored.
    pub fn reconstruct(&self, frags: &[(Efi, &[u8])]) -> Result<Vec<Vec<u8>>, CodecError> {
        let mut by_efi: Vec<Option<&[u8]>> = vec![None; self.n];
        let mut len = None;
        for &(efi, data) in frags {
            let slot = by_efi.get_mut(efi as usize).ok_or(CodecError::UnknownEfi { efi, n: self.n as u32 })?;
            if *len.get_or_insert(data.len()) != data.len() {
                return Err(CodecError::LengthMismatch);
            }
            slot.get_or_insert(data);
        }
        let have = by_efi.iter().filter(|s| s.is_some()).count();
        if have < self.k {
            return Err(CodecError::Insufficient { have, need: self.k });
        }
        let len = len.unwrap_or(0);
        let missing: Vec<usize> = (0..self.k).filter(|&i| by_efi[i].is_none()).collect();
        let mut sources: Vec<Vec<u8>> =
            (0..self.k).map(|i| by_efi[i].map(<[u8]>::to_vec).unwrap_or_default()).collect();
        if missing.is_empty() {
            return Ok(sources);
        }
        let parities: Vec<usize> =
            (0..self.n - self.k).filter(|&p| by_efi[self.k + p].is_some()).take(missing.len()).collect();

        // Residuals: parity minus the contribution of the known sources.
        let residuals: Vec<Vec<u8>> = parities
            .iter()
            .map(|&p| {
                let mut s = by_efi[self.k + p].unwrap().to_vec();
                for i in (0..self.k).filter(|i| by_efi[*i].is_some()) {
                    gf256::mul_add_table(&mut s, &sources[i], &self.tables[p][i]);
                }
                s
            })
            .collect();
        let mut sub: Vec<Vec<u8>> =
            parities.iter().map(|&p| missing.iter().map(|&i| self.coef[p][i]).collect()).collect();
        if !gf256::invert(&mut sub) {
            unreachable!("Cauchy submatrix is always invertible");
        }
        for (b, &i) in missing.iter().enumerate() {
            let mut out = vec![0u8; len];
            for (a, res) in residuals.iter().enumerate() {
                gf256::mul_add(&mut out, res, sub[b][a]);
            }
            sources[i] = out;
        }
        Ok(sources)
    }
}
