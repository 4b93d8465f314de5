//! Address text encodings: Bitcoin-style base-58 and Ethereum-style `0x` hex.

use thiserror::Error;

pub const BASE58_ALPHABET: &[u8; 58] =
    b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("invalid base-58 character {0:?} at offset {1}")]
    InvalidBase58Char(char, usize),
    #[error("base-16 text must start with 0x")]
    MissingHexPrefix,
    #[error("invalid base-16 text: {0}")]
    InvalidHex(String),
}

/// Encode bytes in base-58. Each leading zero byte becomes one leading `'1'`.
pub fn encode_base58(bytes: &[u8]) -> String {
    let zeros = bytes.iter().take_while(|&&b| b == 0).count();
    // Little-endian base-58 digits of the non-zero tail.
    let mut digits: Vec<u8> = Vec::with_capacity(bytes.len() * 138 / 100 + 1);
    for &byte in &bytes[zeros..] {
        let mut carry = byte as u32;
        for d in digits.iter_mut() {
            carry += (*d as u32) << 8;
            *d = (carry % 58) as u8;
            carry /= 58;
        }
        while carry > 0 {
            digits.push((carry % 58) as u8);
            carry /= 58;
        }
    }
    let mut out = String::with_capacity(zeros + digits.len());
    out.extend(std::iter::repeat_n('1', zeros));
    out.extend(digits.iter().rev().map(|&d| BASE58_ALPHABET[d as usize] as char));
    out
}

pub fn decode_base58(text: &str) -> Result<Vec<u8>, DecodeError> {
    let ones = text.bytes().take_while(|&c| c == b'1').count();
    let mut bytes: Vec<u8> = Vec::with_capacity(text.len());
    for (i, c) in text.char_indices().skip(ones) {
        let value = BASE58_ALPHABET
            .iter()
            .position(|&a| a as char == c)
            .ok_or(DecodeError::InvalidBase58Char(c, i))? as u32;
        let mut carry = value;
        for b in bytes.iter_mut() {
            carry += (*b as u32) * 58;
            *b = (carry & 0xff) as u8;
            carry >>= 8;
        }
        while carry > 0 {
            bytes.push((carry & 0xff) as u8);
            carry >>= 8;
        }
    }
    let mut out = vec![0u8; ones];
    out.extend(bytes.iter().rev());
    Ok(out)
}

/// Lowercase hex with a `0x` prefix.
pub fn encode_base16(bytes: &[u8]) -> String {
    format!("0x{}", hex::encode(bytes))
}

pub fn decode_base16(text: &str) -> Result<Vec<u8>, DecodeError> {
    let body = text.strip_prefix("0x").ok_or(DecodeError::MissingHexPrefix)?;
    hex::decode(body).map_err(|e| DecodeError::InvalidHex(e.to_string()))
}
