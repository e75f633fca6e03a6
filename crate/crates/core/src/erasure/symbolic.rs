//! EFI-only MDS model: an object is decodable iff at least `k` distinct EFIs exist.

use super::Efi;

pub fn distinct_efis(efis: impl IntoIterator<Item = Efi>, n: u32) -> usize {
    let mut seen = vec![false; n as usize];
    let mut count = 0;
    for e in efis {
        if let Some(s) = seen.get_mut(e as usize) {
            if !*s {
                *s = true;
                count += 1;
            }
        }
    }
    count
}
