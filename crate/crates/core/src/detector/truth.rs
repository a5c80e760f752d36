use super::BBox;
use crate::stream::GopStream;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub class_id: u16,
    pub bbox: BBox,
}

/// Objects known to be present in each frame. Frames without an entry have
/// unknown content.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    frames: BTreeMap<u32, Vec<TruthObject>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marks `frame_index` as known, with no objects yet.
    pub fn mark_known(&mut self, frame_index: u32) {
        self.frames.entry(frame_index).or_default();
    }

    pub fn add(&mut self, frame_index: u32, object: TruthObject) {
        self.frames.entry(frame_index).or_default().push(object);
    }

    pub fn objects(&self, frame_index: u32) -> Option<&[TruthObject]> {
        self.frames.get(&frame_index).map(Vec::as_slice)
    }

    pub fn presence(&self, frame_index: u32, class_id: u16) -> Option<bool> {
        self.objects(frame_index)
            .map(|objs| objs.iter().any(|o| o.class_id == class_id))
    }

    /// Builds truth from the per-frame presence bits of a stream. Present
    /// frames get one full-frame object of `target_class`.
    pub fn from_stream(stream: &GopStream, target_class: u16) -> Self {
        let mut gt = Self::new();
        let full = BBox::full_frame(stream.frame_width(), stream.frame_height());
        for f in stream.frames() {
            match f.gt_presence {
                Some(true) => gt.add(
                    f.index,
                    TruthObject {
                        class_id: target_class,
                        bbox: full,
                    },
                ),
                Some(false) => gt.mark_known(f.index),
                None => {}
            }
        }
        gt
    }
}
