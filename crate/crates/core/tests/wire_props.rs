use proptest::prelude::*;

use evs::model::VideoSource;
use evs::wire::{self, decode, decode_stream, encode, FramePayload, Hello, Message, RatePayload, ResultPayload, Role, WireError};

fn source() -> impl Strategy<Value = VideoSource> {
    prop_oneof![Just(VideoSource::Inner), Just(VideoSource::Outer)]
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (prop_oneof![Just(Role::Dashcam), Just(Role::Worker)], source(), any::<u32>(), "[a-z0-9-]{0,24}")
            .prop_map(|(role, source, worker_id, name)| Message::Hello(Hello { role, source, worker_id, name })),
        (any::<u64>(), source(), any::<u64>(), prop::collection::vec(any::<u8>(), 0..512)).prop_map(
            |(frame_id, source, capture_ts_us, blob)| Message::Frame(FramePayload { frame_id, source, capture_ts_us, blob })
        ),
        (any::<u64>(), source(), any::<u32>(), any::<u16>(), 0u8..4, prop::collection::vec(any::<u8>(), 0..128)).prop_map(
            |(frame_id, source, analysis_time_us, queue_len_after, flags, detections)| Message::Result(ResultPayload {
                frame_id,
                source,
                analysis_time_us,
                queue_len_after,
                flags,
                detections,
            })
        ),
        any::<u32>().prop_map(|m| Message::Rate(RatePayload { per_camera_rate_millifps: m })),
        Just(Message::Bye),
        Just(Message::Ping),
    ]
}

proptest! {
    #[test]
    fn encode_then_decode_is_identity(m in message()) {
        let bytes = encode(&m);
        let (back, used) = decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn every_strict_prefix_is_incomplete(m in message()) {
        let bytes = encode(&m);
        for cut in 0..bytes.len() {
            let is_incomplete = matches!(decode(&bytes[..cut]), Err(WireError::Incomplete { .. }));
            prop_assert!(is_incomplete, "prefix of {} bytes", cut);
        }
    }

    #[test]
    fn concatenated_messages_split_back_out(ms in prop::collection::vec(message(), 0..12)) {
        let mut buf = Vec::new();
        for m in &ms {
            buf.extend(encode(m));
        }
        let out = decode_stream(&buf);
        prop_assert!(out.error.is_none());
        prop_assert_eq!(out.consumed, buf.len());
        prop_assert_eq!(out.messages, ms);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let out = decode_stream(&bytes);
        prop_assert!(out.consumed <= bytes.len());
        if let Some((offset, _)) = out.error {
            prop_assert_eq!(offset, out.consumed);
        }
    }

    #[test]
    fn millifps_round_trip(m in 0u32..=1_000_000) {
        prop_assert_eq!(wire::to_millifps(wire::from_millifps(m)), m);
    }
}

#[test]
fn reserved_result_flags_are_rejected() {
    let mut bytes = encode(&Message::Result(ResultPayload {
        frame_id: 1,
        source: VideoSource::Inner,
        analysis_time_us: 1,
        queue_len_after: 0,
        flags: 0,
        detections: Vec::new(),
    }));
    // flags byte sits after length(4) type(1) id(8) source(1) time(4) queue(2)
    bytes[20] = 0x04;
    assert!(matches!(decode(&bytes), Err(e) if !matches!(e, WireError::Incomplete { .. })));
}

#[test]
fn unknown_type_and_oversized_length_are_errors() {
    assert!(matches!(decode(&[0, 0, 0, 1, 0x7f]), Err(WireError::UnknownType(0x7f))));
    assert!(decode(&[0xff, 0xff, 0xff, 0xff, 0x02]).is_err_and(|e| !matches!(e, WireError::Incomplete { .. })));
    assert!(decode(&[0, 0, 0, 0]).is_err_and(|e| !matches!(e, WireError::Incomplete { .. })));
}

#[test]
fn read_and_write_over_a_byte_stream() {
    let msgs = [Message::Ping, Message::Rate(RatePayload { per_camera_rate_millifps: 15_000 }), Message::Bye];
    let mut buf = Vec::new();
    for m in &msgs {
        wire::write_message(&mut buf, m).unwrap();
    }
    let mut r = std::io::Cursor::new(buf);
    for m in &msgs {
        assert_eq!(&wire::read_message(&mut r).unwrap(), m);
    }
    assert!(wire::read_message(&mut r).is_err());
}
