use serde::{Deserialize, Serialize};

use super::VideoSequence;
use crate::{Error, Result};

/// `n` context frames, `m` target frames, windows every `stride` frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub context_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(context_len: usize, horizon: usize, stride: usize) -> Result<Self> {
        let spec = Self {
            context_len,
            horizon,
            stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("context_len", self.context_len),
            ("horizon", self.horizon),
            ("stride", self.stride),
        ] {
            if v < 1 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn span(&self) -> usize {
        self.context_len + self.horizon
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub context: VideoSequence,
    pub target: VideoSequence,
    pub offset: usize,
}

impl Window {
    pub fn id(&self) -> &str {
        self.context.id()
    }
}

/// Windows cut from one or more sequences.
#[derive(Clone, Debug, Default)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    /// Sequences too short for a single window.
    pub too_short: usize,
}

/// Cuts `(context, target)` pairs at offsets `0, stride, 2*stride, ...`.
pub fn make_windows(seq: &VideoSequence, spec: &WindowSpec) -> WindowSet {
    let mut set = WindowSet::default();
    if seq.len() < spec.span() {
        set.too_short = 1;
        return set;
    }
    let mut offset = 0;
    while offset + spec.span() <= seq.len() {
        let id = format!("{}@{offset}", seq.id());
        let context = seq
            .slice(offset, spec.context_len, id.clone())
            .expect("window in range");
        let target = seq
            .slice(offset + spec.context_len, spec.horizon, id)
            .expect("window in range");
        set.windows.push(Window {
            context,
            target,
            offset,
        });
        offset += spec.stride;
    }
    set
}

/// [`make_windows`] over many sequences, in order.
pub fn make_windows_all(seqs: &[VideoSequence], spec: &WindowSpec) -> WindowSet {
    let mut all = WindowSet::default();
    for s in seqs {
        let set = make_windows(s, spec);
        all.windows.extend(set.windows);
        all.too_short += set.too_short;
    }
    all
}
