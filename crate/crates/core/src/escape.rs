//! Percent-escaping for tokens that end up inside TSV columns and encoded paths.

/// Characters that are escaped inside node kind labels of an encoded path.
pub const LABEL_RESERVED: &[char] = &['%', '^', '_', '|', ',', ':', '\t', '\n', '\r', ' '];

/// Characters that are escaped inside terminal values and labels written to
/// TSV files or fused into context tokens.
pub const VALUE_RESERVED: &[char] = &['%', ':', '\t', '\n', '\r', ' '];

pub fn escape(raw: &str, reserved: &[char]) -> String {
    if !raw.contains(reserved) {
        return raw.to_string();
    }
    let mut out = String::with_capacity(raw.len() + 8);
    for ch in raw.chars() {
        if reserved.contains(&ch) {
            let mut buf = [0u8; 4];
            for byte in ch.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{byte:02X}"));
            }
        } else {
            out.push(ch);
        }
    }
    out
}

/// Inverse of [`escape`]. Malformed escapes are kept verbatim.
pub fn unescape(encoded: &str) -> String {
    if !encoded.contains('%') {
        return encoded.to_string();
    }
    let bytes = encoded.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 3 <= bytes.len() {
            let hi = (bytes[i + 1] as char).to_digit(16);
            let lo = (bytes[i + 2] as char).to_digit(16);
            if let (Some(hi), Some(lo)) = (hi, lo) {
                out.push((hi * 16 + lo) as u8);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

pub fn escape_label(raw: &str) -> String {
    escape(raw, LABEL_RESERVED)
}

pub fn escape_value(raw: &str) -> String {
    escape(raw, VALUE_RESERVED)
}
