//! Stable 64-bit FNV-1a hashing (identical on every platform and run).

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Hash of an ordered string list, entries separated by `\n`.
pub fn fnv1a64_list<S: AsRef<str>>(items: &[S]) -> u64 {
    let mut h = OFFSET;
    for (i, s) in items.iter().enumerate() {
        if i > 0 {
            h ^= b'\n' as u64;
            h = h.wrapping_mul(PRIME);
        }
        for &b in s.as_ref().as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}
