//! Path frame: `len:u8 path:len-bytes inner`, where `path` is printable ASCII
//! starting with `/`.

use crate::codec::DecodeError;

use super::TransportError;

/// Reserved for the public overlay.
pub const PUBLIC_PATH: &str = "/";

pub fn validate_path(path: &str) -> Result<(), TransportError> {
    let ok = path.starts_with('/') && path.len() <= u8::MAX as usize && path.bytes().all(|b| (0x21..=0x7e).contains(&b));
    if ok {
        Ok(())
    } else {
        Err(TransportError::InvalidPath(path.to_string()))
    }
}

/// Panics on an invalid path; paths are validated at registration.
pub fn encode_path_frame(path: &str, inner: &[u8]) -> Vec<u8> {
    assert!(validate_path(path).is_ok(), "invalid path {path:?}");
    let mut out = Vec::with_capacity(1 + path.len() + inner.len());
    out.push(path.len() as u8);
    out.extend_from_slice(path.as_bytes());
    out.extend_from_slice(inner);
    out
}

pub fn decode_path_frame(bytes: &[u8]) -> Result<(&str, &[u8]), DecodeError> {
    let (&n, rest) = bytes.split_first().ok_or(DecodeError::Truncated)?;
    let n = n as usize;
    if rest.len() < n {
        return Err(DecodeError::Truncated);
    }
    let (path, inner) = rest.split_at(n);
    let path = std::str::from_utf8(path).map_err(|_| DecodeError::Invalid("path"))?;
    validate_path(path).map_err(|_| DecodeError::Invalid("path"))?;
    Ok((path, inner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn public_frame_layout() {
        assert_eq!(encode_path_frame("/", &[9, 9]), vec![1, b'/', 9, 9]);
    }

    #[test]
    fn bad_paths_rejected() {
        for p in ["", "x", "/a b", "/é"] {
            assert!(validate_path(p).is_err(), "{p:?}");
        }
        assert!(validate_path(&format!("/{}", "a".repeat(254))).is_ok());
        assert!(validate_path(&format!("/{}", "a".repeat(255))).is_err());
        assert!(decode_path_frame(&[3, b'/', b'a']).is_err());
        assert!(decode_path_frame(&[1, b'x', 0]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(path in "/[!-~]{0,40}", inner in proptest::collection::vec(any::<u8>(), 0..64)) {
            let bytes = encode_path_frame(&path, &inner);
            let (p, i) = decode_path_frame(&bytes).unwrap();
            prop_assert_eq!(p, path.as_str());
            prop_assert_eq!(i, inner.as_slice());
        }
    }
}
