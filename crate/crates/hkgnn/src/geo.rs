//! Geohash encoding. Lengths 4, 5, and 6 give roughly 20 km, 2.4 km, and
//! 0.6 km cells, which is the spatial hierarchy the graph uses.

use crate::error::{Error, Result};

pub const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// Encode a coordinate to a geohash of the requested length. Bits alternate
/// longitude-first; each bit is 1 when the value falls in the upper half
/// (midpoint inclusive) of the current range.
pub fn geohash_encode(lat: f64, lon: f64, length: usize) -> Result<String> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Invalid(format!("coordinate ({lat}, {lon}) out of range")));
    }
    if length == 0 || length > 12 {
        return Err(Error::Invalid(format!("geohash length {length} outside 1..=12")));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0_f64, 90.0_f64);
    let (mut lon_lo, mut lon_hi) = (-180.0_f64, 180.0_f64);
    let mut out = String::with_capacity(length);
    let mut even_bit = true;
    let mut ch = 0_usize;
    let mut bit = 0_usize;
    while out.len() < length {
        ch <<= 1;
        if even_bit {
            let mid = (lon_lo + lon_hi) / 2.0;
            if lon >= mid {
                ch |= 1;
                lon_lo = mid;
            } else {
                lon_hi = mid;
            }
        } else {
            let mid = (lat_lo + lat_hi) / 2.0;
            if lat >= mid {
                ch |= 1;
                lat_lo = mid;
            } else {
                lat_hi = mid;
            }
        }
        even_bit = !even_bit;
        bit += 1;
        if bit == 5 {
            out.push(BASE32[ch] as char);
            ch = 0;
            bit = 0;
        }
    }
    Ok(out)
}
