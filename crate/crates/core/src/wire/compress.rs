use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::WireError;

pub const MAX_DECOMPRESSED_LEN: usize = 64 * 1024 * 1024;

/// Raw DEFLATE (no zlib/gzip wrapper).
pub fn compress_channel_data(bytes: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::with_capacity(bytes.len() / 2 + 16), Compression::default());
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

pub fn decompress_channel_data(bytes: &[u8]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    DeflateDecoder::new(bytes)
        .take(MAX_DECOMPRESSED_LEN as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| WireError::Decompress(e.to_string()))?;
    if out.len() > MAX_DECOMPRESSED_LEN {
        return Err(WireError::DecompressedTooLarge {
            cap: MAX_DECOMPRESSED_LEN,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_round_trip() {
        let c = compress_channel_data(&[]);
        assert!(!c.is_empty());
        assert_eq!(decompress_channel_data(&c).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn repetitive_input_shrinks() {
        let unit: Vec<u8> = (0..137u8).collect();
        let input: Vec<u8> = unit.iter().cycle().take(10 * 1024).copied().collect();
        let c = compress_channel_data(&input);
        assert!(c.len() < input.len(), "{} >= {}", c.len(), input.len());
        assert_eq!(decompress_channel_data(&c).unwrap(), input);
    }

    #[test]
    fn corrupt_stream_rejected() {
        // BTYPE = 11 is reserved in DEFLATE.
        assert!(matches!(
            decompress_channel_data(&[0xff, 0xff, 0xff]),
            Err(WireError::Decompress(_))
        ));
    }

    #[test]
    fn decompression_bomb_capped() {
        let zeros = vec![0u8; MAX_DECOMPRESSED_LEN + 1];
        let c = compress_channel_data(&zeros);
        assert!(matches!(
            decompress_channel_data(&c),
            Err(WireError::DecompressedTooLarge { .. })
        ));
    }
}
