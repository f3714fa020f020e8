//! Property tests for the datagram codec: anything encodable decodes back
//! identically, and no single corrupted byte slips through.

use erasurekey::wire::{KeyPacket, WireError, WIRE_SIZE};
use proptest::prelude::*;

proptest! {
    #[test]
    fn encode_decode_round_trips(
        session_id in any::<u64>(),
        index in any::<u32>(),
        payload in prop::array::uniform32(any::<u8>()),
    ) {
        let packet = KeyPacket { session_id, index, payload };
        let decoded = KeyPacket::decode(&packet.encode()).unwrap();
        prop_assert_eq!(decoded, packet);
    }

    #[test]
    fn any_single_byte_corruption_is_rejected(
        session_id in any::<u64>(),
        index in any::<u32>(),
        payload in prop::array::uniform32(any::<u8>()),
        position in 0..WIRE_SIZE,
        flip in 1u8..=255,
    ) {
        let packet = KeyPacket { session_id, index, payload };
        let mut frame = packet.encode();
        frame[position] ^= flip;
        let result = KeyPacket::decode(&frame);
        prop_assert!(
            matches!(result, Err(WireError::BadMagic { .. } | WireError::IntegrityMismatch { .. })),
            "corruption at byte {} survived: {:?}",
            position,
            result
        );
    }

    #[test]
    fn truncations_and_extensions_are_rejected(
        session_id in any::<u64>(),
        index in any::<u32>(),
        payload in prop::array::uniform32(any::<u8>()),
        cut in 0..WIRE_SIZE,
    ) {
        let packet = KeyPacket { session_id, index, payload };
        let frame = packet.encode();
        let truncated_rejected =
            matches!(KeyPacket::decode(&frame[..cut]), Err(WireError::WrongLength { .. }));
        prop_assert!(truncated_rejected, "truncation to {} bytes was accepted", cut);
        let mut extended = frame.to_vec();
        extended.push(0);
        let extended_rejected =
            matches!(KeyPacket::decode(&extended), Err(WireError::WrongLength { .. }));
        prop_assert!(extended_rejected, "a {}-byte frame was accepted", extended.len());
    }
}
