use vidpred_autograd::Tensor;

use crate::{Error, Result};

/// A `[T, H, W, C]` stack of frames with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    id: String,
    shape: [usize; 4],
    data: Vec<f64>,
}

impl VideoSequence {
    pub fn new(id: impl Into<String>, shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let [t, h, w, c] = shape;
        if t < 1 {
            return Err(Error::ShapeMismatch("a sequence needs at least one frame".into()));
        }
        if h < 8 || w < 8 {
            return Err(Error::ShapeMismatch(format!(
                "frames must be at least 8x8, got {h}x{w}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(Error::ShapeMismatch(format!("channels must be 1 or 3, got {c}")));
        }
        if data.len() != t * h * w * c {
            return Err(Error::ShapeMismatch(format!(
                "{shape:?} needs {} values, got {}",
                t * h * w * c,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidSpec(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            id: id.into(),
            shape,
            data,
        })
    }

    /// Builds a sequence from frames, each `[H, W, C]` row-major.
    pub fn from_frames(id: impl Into<String>, frames: &[Vec<f64>], hwc: [usize; 3]) -> Result<Self> {
        let [h, w, c] = hwc;
        let mut data = Vec::with_capacity(frames.len() * h * w * c);
        for f in frames {
            if f.len() != h * w * c {
                return Err(Error::ShapeMismatch(format!(
                    "frame has {} values, expected {}",
                    f.len(),
                    h * w * c
                )));
            }
            data.extend_from_slice(f);
        }
        Self::new(id, [frames.len(), h, w, c], data)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn frame_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Frame `t` as `[H, W, C]` row-major values.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize, id: impl Into<String>) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} out of range for {} frames",
                start + len,
                self.len()
            )));
        }
        let n = self.frame_len();
        Ok(Self {
            id: id.into(),
            shape: [len, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    /// Concatenates two sequences of the same frame shape along time.
    pub fn concat(&self, other: &VideoSequence) -> Result<Self> {
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::ShapeMismatch(format!(
                "cannot join {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut shape = self.shape;
        shape[0] += other.shape[0];
        Ok(Self {
            id: self.id.clone(),
            shape,
            data,
        })
    }

    /// Same-shape check used by metrics and losses.
    pub fn expect_same_shape(&self, other: &VideoSequence) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Frame `t` of every sequence as a `[B, C, H, W]` batch tensor.
    pub fn batch_frame(seqs: &[&VideoSequence], t: usize) -> Tensor {
        let [_, h, w, c] = seqs[0].shape;
        let mut data = Vec::with_capacity(seqs.len() * h * w * c);
        for s in seqs {
            let f = s.frame(t);
            for ch in 0..c {
                data.extend((0..h * w).map(|p| f[p * c + ch]));
            }
        }
        Tensor::new(&[seqs.len(), c, h, w], data).expect("batch frame shape")
    }

    /// Inverse of [`batch_frame`](Self::batch_frame) for a list of `[B, C, H, W]` frames.
    ///
    /// Values are clamped into `[0, 1]`.
    pub fn from_batch_frames(ids: &[String], frames: &[Tensor]) -> Result<Vec<Self>> {
        let Some(first) = frames.first() else {
            return Err(Error::Empty("no frames to assemble".into()));
        };
        let s = first.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if ids.len() != b {
            return Err(Error::ShapeMismatch(format!("{} ids for batch {b}", ids.len())));
        }
        (0..b)
            .map(|bi| {
                let mut data = Vec::with_capacity(frames.len() * h * w * c);
                for f in frames {
                    let plane = &f.data()[bi * c * h * w..(bi + 1) * c * h * w];
                    for p in 0..h * w {
                        for ch in 0..c {
                            data.push(plane[ch * h * w + p].clamp(0.0, 1.0));
                        }
                    }
                }
                Self::new(ids[bi].clone(), [frames.len(), h, w, c], data)
            })
            .collect()
    }
}
