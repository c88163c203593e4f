use std::collections::VecDeque;

use super::{BatchId, Frame, FrameBatch};

/// Pops the oldest `batch_size` frames off `buffer` as a batch, or returns
/// `None` (not ready) while fewer are buffered.
pub fn assemble_batch(
    buffer: &mut VecDeque<Frame>,
    batch_size: usize,
    batch_id: BatchId,
) -> Option<FrameBatch> {
    assert!(batch_size > 0, "batch_size must be positive");
    if buffer.len() < batch_size {
        return None;
    }
    let frames: Vec<Frame> = buffer.drain(..batch_size).collect();
    Some(FrameBatch::new(batch_id, frames).expect("buffered frames arrive in capture order"))
}

/// Tumbling-window batcher. Batch ids start at 1 and increase by one.
#[derive(Debug)]
pub struct Batcher {
    batch_size: usize,
    buffer: VecDeque<Frame>,
    next_id: u64,
}

impl Batcher {
    pub fn new(batch_size: usize) -> Self {
        assert!(batch_size > 0, "batch_size must be positive");
        Self {
            batch_size,
            buffer: VecDeque::with_capacity(batch_size),
            next_id: 1,
        }
    }

    /// Buffers `frame` and returns a batch as soon as one is complete.
    pub fn push(&mut self, frame: Frame) -> Option<FrameBatch> {
        if let Some(last) = self.buffer.back() {
            debug_assert!(frame.sequence_no > last.sequence_no);
        }
        self.buffer.push_back(frame);
        let batch = assemble_batch(&mut self.buffer, self.batch_size, BatchId(self.next_id))?;
        self.next_id += 1;
        Some(batch)
    }

    /// Frames waiting for a full batch.
    pub fn residual(&self) -> usize {
        self.buffer.len()
    }
}
