use crate::gateway::{
    render_template, Backend, ContentPart, GatewayError, ModelRequest, PromptPack, RequestKey,
};
use crate::ingest::FrameBatch;

use super::{AgentsError, Caption, CaptionSequence};

/// Entity classes and the words that tag them.
const VOCABULARY: &[(&str, &[&str])] = &[
    (
        "child",
        &[
            "child", "children", "kid", "kids", "boy", "boys", "girl", "girls", "toddler",
            "toddlers", "baby", "infant", "minor", "son", "daughter", "schoolchild", "youngster",
        ],
    ),
    (
        "adult",
        &[
            "adult", "adults", "man", "men", "woman", "women", "stranger", "strangers", "parent",
            "parents", "father", "mother", "dad", "mom", "mum", "guardian", "grandparent",
            "grandmother", "grandfather", "person", "people", "teenager", "teen",
        ],
    ),
    (
        "vehicle",
        &[
            "vehicle", "vehicles", "car", "cars", "van", "vans", "truck", "suv", "minivan",
            "bus", "motorcycle", "motorbike", "scooter", "taxi",
        ],
    ),
];

/// Tags a caption with the entity classes its words mention, in vocabulary order.
pub fn extract_entities(text: &str) -> Vec<String> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    VOCABULARY
        .iter()
        .filter(|(_, synonyms)| words.iter().any(|w| synonyms.contains(&w.as_str())))
        .map(|(class, _)| class.to_string())
        .collect()
}

/// PNG payloads of every frame in the batch, in capture order.
pub fn frame_images(batch: &FrameBatch) -> Vec<ContentPart> {
    batch
        .frames()
        .iter()
        .map(|f| ContentPart::png(&f.to_png()))
        .collect()
}

/// Captions every frame in capture order. On failure, the error names the
/// frame and carries the captions gathered so far.
pub fn analyze_images(
    batch: &FrameBatch,
    backend: &dyn Backend,
    prompts: &PromptPack,
) -> Result<CaptionSequence, AgentsError> {
    let mut captions: Vec<Caption> = Vec::with_capacity(batch.len());
    for frame in batch.frames() {
        let captured_at = frame.captured_at.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string();
        let seq = frame.sequence_no.to_string();
        let role = render_template(
            &prompts.caption_prompt,
            &[("frame_seq", &seq), ("captured_at", &captured_at)],
        );
        let request = ModelRequest::new(
            RequestKey::Caption {
                frame_seq: frame.sequence_no,
            },
            role,
            vec![
                ContentPart::text(format!("Frame {seq} captured at {captured_at}.")),
                ContentPart::png(&frame.to_png()),
            ],
        )
        .in_batch(batch.batch_id().0);

        let text = backend
            .complete(&request)
            .map(|r| r.text.trim().to_string())
            .and_then(|t| {
                if t.is_empty() {
                    Err(GatewayError::BadResponse("empty caption".into()))
                } else {
                    Ok(t)
                }
            });
        match text {
            Ok(text) => captions.push(Caption {
                frame_seq: frame.sequence_no,
                entities: extract_entities(&text),
                text,
                captured_at: frame.captured_at,
            }),
            Err(source) => {
                return Err(AgentsError::Caption {
                    frame_seq: frame.sequence_no,
                    partial: captions,
                    source,
                })
            }
        }
    }
    CaptionSequence::new(batch.batch_id(), captions)
}
