//! Small shared helpers: deterministic seed derivation, float formatting,
//! Halton sequences for low-discrepancy sampling templates.

/// FNV-1a over a byte slice. Used for grid identity tags and seed derivation.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives a stream seed from a master seed and a purpose tag, so unrelated
/// consumers of the same master seed get independent deterministic streams.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + tag.len());
    bytes.extend_from_slice(&master.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    fnv1a64(&bytes)
}

/// Serializes an f64 with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // keep integers readable; still round-trip exact
        format!("{v:.1}")
    } else {
        format!("{v:.16e}")
    }
}

/// `i`-th element of the base-`b` Halton sequence, `i >= 1`.
pub fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// First `n` primes, for per-axis Halton bases.
pub fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut cand = 2u64;
    while out.len() < n {
        if out.iter().all(|&p| cand % p != 0) {
            out.push(cand);
        }
        cand += 1;
    }
    out
}
