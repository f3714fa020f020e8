//! On-air packet layout.
//!
//! Fixed 52-byte frame, all integers big-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "KEY1" (0x4B455931)
//!      4     8  session_id
//!     12     4  packet index
//!     16    32  key payload
//!     48     4  CRC32 (IEEE) over bytes 0..48
//! ```
//!
//! The checksum models link-layer integrity: a corrupted frame is discarded, never
//! repaired, because a payload Bob and Alice disagree on poisons the derived key.

use thiserror::Error;

pub const MAGIC: u32 = 0x4B45_5931; // "KEY1"
pub const PAYLOAD_SIZE: usize = 32;
pub const WIRE_SIZE: usize = 52;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("frame is {got} bytes; expected exactly {WIRE_SIZE}")]
    WrongLength { got: usize },
    #[error("bad magic {got:#010x}; expected {MAGIC:#010x}")]
    BadMagic { got: u32 },
    #[error("integrity check failed: stored {stored:#010x}, computed {computed:#010x}")]
    IntegrityMismatch { stored: u32, computed: u32 },
}

/// One key-material frame as it travels over the lossy channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyPacket {
    pub session_id: u64,
    pub index: u32,
    pub payload: [u8; PAYLOAD_SIZE],
}

impl KeyPacket {
    pub fn encode(&self) -> [u8; WIRE_SIZE] {
        let mut buf = [0u8; WIRE_SIZE];
        buf[0..4].copy_from_slice(&MAGIC.to_be_bytes());
        buf[4..12].copy_from_slice(&self.session_id.to_be_bytes());
        buf[12..16].copy_from_slice(&self.index.to_be_bytes());
        buf[16..48].copy_from_slice(&self.payload);
        let crc = crc32fast::hash(&buf[0..48]);
        buf[48..52].copy_from_slice(&crc.to_be_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let frame: &[u8; WIRE_SIZE] =
            bytes.try_into().map_err(|_| WireError::WrongLength { got: bytes.len() })?;
        let magic = u32::from_be_bytes(frame[0..4].try_into().unwrap());
        if magic != MAGIC {
            return Err(WireError::BadMagic { got: magic });
        }
        let stored = u32::from_be_bytes(frame[48..52].try_into().unwrap());
        let computed = crc32fast::hash(&frame[0..48]);
        if stored != computed {
            return Err(WireError::IntegrityMismatch { stored, computed });
        }
        Ok(Self {
            session_id: u64::from_be_bytes(frame[4..12].try_into().unwrap()),
            index: u32::from_be_bytes(frame[12..16].try_into().unwrap()),
            payload: frame[16..48].try_into().unwrap(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KeyPacket {
        let mut payload = [0u8; PAYLOAD_SIZE];
        for (i, b) in payload.iter_mut().enumerate() {
            *b = i as u8;
        }
        KeyPacket { session_id: 0x0102_0304_0506_0708, index: 0x0A0B_0C0D, payload }
    }

    #[test]
    fn crc_is_the_standard_ieee_polynomial() {
        // Canonical check value for CRC-32/ISO-HDLC.
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn field_layout_is_fixed() {
        let frame = sample().encode();
        assert_eq!(frame.len(), WIRE_SIZE);
        assert_eq!(&frame[0..4], b"KEY1");
        assert_eq!(&frame[4..12], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(&frame[12..16], &[0x0A, 0x0B, 0x0C, 0x0D]);
        assert_eq!(&frame[16..48], &sample().payload);
        let crc = u32::from_be_bytes(frame[48..52].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&frame[0..48]));
    }

    #[test]
    fn round_trip() {
        let packet = sample();
        assert_eq!(KeyPacket::decode(&packet.encode()), Ok(packet));
    }

    #[test]
    fn any_single_byte_flip_is_detected() {
        let frame = sample().encode();
        for pos in 0..WIRE_SIZE {
            let mut corrupt = frame;
            corrupt[pos] ^= 0x40;
            assert!(KeyPacket::decode(&corrupt).is_err(), "flip at byte {pos} went unnoticed");
        }
    }

    #[test]
    fn wrong_sizes_are_rejected() {
        let frame = sample().encode();
        assert_eq!(KeyPacket::decode(&frame[..51]), Err(WireError::WrongLength { got: 51 }));
        let mut long = frame.to_vec();
        long.push(0);
        assert_eq!(KeyPacket::decode(&long), Err(WireError::WrongLength { got: 53 }));
        assert_eq!(KeyPacket::decode(&[]), Err(WireError::WrongLength { got: 0 }));
    }

    #[test]
    fn bad_magic_is_distinguished_from_corruption() {
        let mut frame = sample().encode();
        frame[0..4].copy_from_slice(b"NOPE");
        assert_eq!(
            KeyPacket::decode(&frame),
            Err(WireError::BadMagic { got: u32::from_be_bytes(*b"NOPE") })
        );
    }
}
