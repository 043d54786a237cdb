//! SHA-256 digests, hex-encoded lowercase, used to bind reports, commitments,
//! and ledger entries to exact input bytes.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}
