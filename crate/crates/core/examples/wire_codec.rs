//! Encode each protocol message, dump its bytes, and decode a stream that
//! ends with a partial message.
//!
//!     cargo run --example wire_codec

use evs::model::{AnalysisResult, Detection, VideoSource, WorkerId};
use evs::wire::{self, FramePayload, Hello, Message, RatePayload, ResultPayload, Role};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let result = AnalysisResult {
        frame_id: 7,
        source: VideoSource::Inner,
        worker_id: WorkerId(1),
        analysis_time: 0.0315,
        queue_len_after: 2,
        detections: vec![Detection::new("drowsy")],
        alarm: true,
        error: false,
    };
    let messages = vec![
        Message::Hello(Hello { role: Role::Worker, source: VideoSource::Inner, worker_id: 0xffff_ffff, name: "phone-b".into() }),
        Message::Frame(FramePayload { frame_id: 1, source: VideoSource::Outer, capture_ts_us: 33_333, blob: vec![0xab; 8] }),
        Message::Result(ResultPayload::from_result(&result)),
        Message::Rate(RatePayload { per_camera_rate_millifps: wire::to_millifps(27.92) }),
        Message::Ping,
        Message::Bye,
    ];

    let mut stream = Vec::new();
    for m in &messages {
        let bytes = wire::encode(m);
        println!("{:<6} {:>3} bytes  {}", kind(m), bytes.len(), hex(&bytes));
        stream.extend(bytes);
    }

    // Chop the last message in half: the decoder keeps what it can.
    let cut = stream.len() - 3;
    let out = wire::decode_stream(&stream[..cut]);
    println!(
        "stream of {cut} bytes: {} whole messages, {} bytes consumed, error {:?}",
        out.messages.len(),
        out.consumed,
        out.error
    );

    if let Message::Result(r) = &out.messages[2] {
        let back = r.clone().into_result(WorkerId(1));
        println!("result detections {:?}, alarm {}", back.detections, back.alarm);
    }
    Ok(())
}

fn kind(m: &Message) -> &'static str {
    match m {
        Message::Hello(_) => "HELLO",
        Message::Frame(_) => "FRAME",
        Message::Result(_) => "RESULT",
        Message::Rate(_) => "RATE",
        Message::Bye => "BYE",
        Message::Ping => "PING",
    }
}
