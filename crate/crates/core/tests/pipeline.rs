//! Cross-module checks: the frame layer, the planner and the inference
//! engine must agree wherever their domains overlap.

use proptest::prelude::*;

use splitwire_core::frame::{chunk_message, reassemble, MsgType, Reassembled};
use splitwire_core::message::ActivationMessage;
use splitwire_core::planner::packet_count;
use splitwire_core::quant::check_alignment;
use splitwire_core::toymodel::{infer_full, split_toy, PartOutput, ToyModel};

proptest! {
    // chunking always produces exactly the planner's packet count
    #[test]
    fn frame_count_equals_planner_packet_count(
        len in 0usize..20_000,
        chunk in 1u32..2000,
    ) {
        let msg = vec![0xA5u8; len];
        let frames = chunk_message(MsgType::Activation, 1, &msg, chunk).unwrap();
        prop_assert_eq!(frames.len() as u64, packet_count(len as u64, chunk).unwrap());
    }
}

#[test]
fn split_inference_survives_the_full_wire_path() {
    // part 1 output -> self-describing activation message -> frames ->
    // shuffled delivery -> reassembly -> decode -> part 2, bit-exact
    let model = ToyModel::demo(1234);
    let input = model.sample_input(9);
    let expected = infer_full(&model, &input).unwrap();

    for index in 1..model.layers().len() {
        let (p1, p2) = split_toy(&model, index).unwrap();
        let PartOutput::Boundary(boundary) = p1.infer(&input).unwrap() else {
            panic!("boundary expected");
        };

        let alignment = check_alignment(p1.boundary_params(), p2.input_params(), 0.0);
        assert!(alignment.aligned, "{}", alignment.diagnostic);

        let message = ActivationMessage::from_tensor(7, &boundary);
        let encoded = message.encode().unwrap();
        let mut frames = chunk_message(MsgType::Activation, 7, &encoded, 250).unwrap();
        frames.reverse();
        frames.push(frames[0].clone()); // duplicate delivery
        let Reassembled::Complete(bytes) = reassemble(&frames).unwrap() else {
            panic!("complete transfer expected");
        };
        let decoded = ActivationMessage::decode(&bytes).unwrap().into_tensor().unwrap();
        assert_eq!(decoded, boundary, "wire path must be lossless");

        let PartOutput::Scores(scores) = p2.infer(&decoded).unwrap() else {
            panic!("scores expected");
        };
        assert_eq!(scores, expected, "split at {index}");
    }
}

#[test]
fn benchmark_boundaries_chunk_to_table_counts() {
    for (bytes, chunk, want) in [
        (150_528usize, 250u32, 603usize),
        (2_744, 250, 11),
        (5_488, 250, 22),
        (5_488, 1460, 4),
    ] {
        let frames =
            chunk_message(MsgType::Activation, 3, &vec![0u8; bytes], chunk).unwrap();
        assert_eq!(frames.len(), want);
        let Reassembled::Complete(back) = reassemble(&frames).unwrap() else {
            panic!("complete");
        };
        assert_eq!(back.len(), bytes);
    }
}
