//! Bit-packed binary codes and Hamming-distance kernels.
//!
//! Codes of `b` bits are written as one contiguous LSB-first bit stream:
//! bit `j` of code `i` lands at stream position `i * b + j`, and stream
//! position `p` is bit `p % 8` of byte `p / 8`. Unused trailing bits of the
//! last byte are zero.

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Codebook;

pub const MAX_BITS: u8 = 16;

/// `ceil(log2(k))`; `k` must be at least 2.
pub fn bits_for(k: usize) -> u8 {
    assert!(k >= 2, "bits_for needs k >= 2");
    ((k - 1).ilog2() + 1) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    bits: u8,
    len: usize,
    bytes: Vec<u8>,
}

pub fn packed_len(num_codes: usize, bits: u8) -> usize {
    (num_codes * bits as usize).div_ceil(8)
}

pub fn pack(codes: &[u32], bits: u8) -> Result<PackedCodes> {
    check_bits(bits)?;
    let mut bytes = vec![0u8; packed_len(codes.len(), bits)];
    let limit = 1u32 << bits;
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut out = 0usize;
    for &code in codes {
        if code >= limit {
            return Err(Error::CodeOverflow { code, bits });
        }
        acc |= (code as u64) << filled;
        filled += bits as u32;
        while filled >= 8 {
            bytes[out] = acc as u8;
            out += 1;
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        bytes[out] = acc as u8;
    }
    Ok(PackedCodes {
        bits,
        len: codes.len(),
        bytes,
    })
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::InvalidConfig(format!(
            "bits per code must be in 1..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

impl PackedCodes {
    /// Wraps an existing stream, checking its length and zero padding.
    pub fn from_bytes(bits: u8, len: usize, bytes: Vec<u8>) -> Result<Self> {
        check_bits(bits)?;
        if bytes.len() != packed_len(len, bits) {
            return Err(Error::Format(format!(
                "packed stream of {len} x {bits}-bit codes needs {} bytes, got {}",
                packed_len(len, bits),
                bytes.len()
            )));
        }
        let used = len * bits as usize;
        if !used.is_multiple_of(8) {
            let last = *bytes.last().expect("non-empty when used % 8 != 0");
            if last >> (used % 8) != 0 {
                return Err(Error::Format("non-zero padding bits in packed stream".into()));
            }
        }
        Ok(Self { bits, len, bytes })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Reads code `i` through a little-endian 64-bit window over the stream.
    #[inline]
    pub fn get(&self, i: usize) -> u32 {
        let pos = i * self.bits as usize;
        let byte = pos >> 3;
        let word = if byte + 8 <= self.bytes.len() {
            u64::from_le_bytes(self.bytes[byte..byte + 8].try_into().unwrap())
        } else {
            let mut buf = [0u8; 8];
            let tail = &self.bytes[byte..];
            buf[..tail.len()].copy_from_slice(tail);
            u64::from_le_bytes(buf)
        };
        ((word >> (pos & 7)) & ((1u64 << self.bits) - 1)) as u32
    }

    pub fn unpack(&self) -> Vec<u32> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Hamming distance from `query` to every stored code, in order.
    pub fn distances(&self, query: u32) -> Result<Vec<u8>> {
        self.check_query(query)?;
        Ok((0..self.len)
            .map(|i| (self.get(i) ^ query).count_ones() as u8)
            .collect())
    }

    /// Smallest Hamming distance between `query` and any stored code.
    pub fn min_distance(&self, query: u32) -> Result<Option<u32>> {
        self.check_query(query)?;
        let mut best: Option<u32> = None;
        for i in 0..self.len {
            let d = (self.get(i) ^ query).count_ones();
            if best.is_none_or(|b| d < b) {
                best = Some(d);
                if d == 0 {
                    break;
                }
            }
        }
        Ok(best)
    }

    fn check_query(&self, query: u32) -> Result<()> {
        if query >= (1u32 << self.bits) {
            return Err(Error::CodeOverflow {
                code: query,
                bits: self.bits,
            });
        }
        Ok(())
    }
}

pub fn hamming(a: u32, b: u32) -> u32 {
    (a ^ b).count_ones()
}

/// The `top_n` stored codes closest to `query`, ascending by distance and
/// then by patch index.
pub fn hamming_scan(
    query: u32,
    query_bits: u8,
    codes: &PackedCodes,
    top_n: usize,
) -> Result<Vec<(usize, u32)>> {
    if query_bits != codes.bits {
        return Err(Error::BitsMismatch {
            expected: codes.bits,
            found: query_bits,
        });
    }
    let dists = codes.distances(query)?;
    // Distances are bounded by the code width, so bucket them.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); codes.bits as usize + 1];
    for (i, &d) in dists.iter().enumerate() {
        buckets[d as usize].push(i);
    }
    let mut out = Vec::with_capacity(top_n.min(codes.len));
    'outer: for (d, idx) in buckets.iter().enumerate() {
        for &i in idx {
            if out.len() == top_n {
                break 'outer;
            }
            out.push((i, d as u32));
        }
    }
    Ok(out)
}

/// Orders centroids along a greedy nearest-neighbour chain starting at
/// centroid 0. `order[new_code] = old_code`.
pub fn locality_order(codebook: &Codebook) -> Vec<usize> {
    let k = codebook.k();
    let mut visited = vec![false; k];
    let mut order = Vec::with_capacity(k);
    let mut current = 0usize;
    visited[0] = true;
    order.push(0);
    while order.len() < k {
        let here = codebook.centroid(current);
        let mut best = usize::MAX;
        let mut best_d = f32::INFINITY;
        for (c, seen) in visited.iter().enumerate() {
            if *seen {
                continue;
            }
            let d = linalg::l2_sq(here, codebook.centroid(c));
            if d < best_d || best == usize::MAX {
                best = c;
                best_d = d;
            }
        }
        visited[best] = true;
        order.push(best);
        current = best;
    }
    order
}
