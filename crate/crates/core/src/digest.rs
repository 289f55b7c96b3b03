use sha2::{Digest, Sha256};

use crate::feature_map::Covariate;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a covariate list: SHA-256 over the little-endian bit patterns of
/// `(gender, age_centuries)` for each entry, in order.
pub fn covariate_digest(data: &[Covariate]) -> String {
    let mut h = Sha256::new();
    for c in data {
        h.update(c.gender().to_le_bytes());
        h.update(c.age_centuries().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// 64-bit fingerprint of a single covariate, used to salt sampling seeds.
pub(crate) fn covariate_fingerprint(c: &Covariate) -> u64 {
    let d = Sha256::new()
        .chain_update(c.gender().to_le_bytes())
        .chain_update(c.age_centuries().to_le_bytes())
        .finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}
