use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One action clip, stored `[channel][frame][joint][body]`.
///
/// Values are held as `f64` but parsers and generators quantize them to `f32`
/// so that the single-precision on-disk format round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: Option<usize>,
    channels: usize,
    frames: usize,
    joints: usize,
    bodies: usize,
    data: Vec<f64>,
}

impl SkeletonSequence {
    pub fn zeros(id: impl Into<String>, channels: usize, frames: usize, joints: usize, bodies: usize) -> Self {
        Self {
            id: id.into(),
            label: None,
            channels,
            frames,
            joints,
            bodies,
            data: vec![0.0; channels * frames * joints * bodies],
        }
    }

    pub fn from_data(
        id: impl Into<String>,
        label: Option<usize>,
        dims: [usize; 4],
        data: Vec<f64>,
    ) -> Result<Self> {
        let [channels, frames, joints, bodies] = dims;
        if channels == 0 || frames == 0 || joints == 0 || bodies == 0 {
            return Err(Error::Dimension(format!("sequence extents must be positive, got {dims:?}")));
        }
        if data.len() != channels * frames * joints * bodies {
            return Err(Error::Dimension(format!(
                "sequence {dims:?} needs {} values, got {}",
                channels * frames * joints * bodies,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite coordinate {v}")));
        }
        Ok(Self {
            id: id.into(),
            label,
            channels,
            frames,
            joints,
            bodies,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn bodies(&self) -> usize {
        self.bodies
    }

    /// `[C, T, N, M]`
    pub fn dims(&self) -> [usize; 4] {
        [self.channels, self.frames, self.joints, self.bodies]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, n: usize, m: usize) -> usize {
        ((c * self.frames + t) * self.joints + n) * self.bodies + m
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, n: usize, m: usize) -> f64 {
        self.data[self.index(c, t, n, m)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, n: usize, m: usize, v: f64) {
        let i = self.index(c, t, n, m);
        self.data[i] = v;
    }

    /// Same id, label, joints and bodies with a new channel/frame layout.
    pub fn with_layout(&self, channels: usize, frames: usize) -> Self {
        let mut s = Self::zeros(self.id.clone(), channels, frames, self.joints, self.bodies);
        s.label = self.label;
        s
    }

    /// Frames `[start, start + len)`.
    pub fn frame_range(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Argument(format!(
                "frame range {start}..{} outside 0..{}",
                start + len,
                self.frames
            )));
        }
        let mut out = self.with_layout(self.channels, len);
        let block = self.joints * self.bodies;
        for c in 0..self.channels {
            let src = (c * self.frames + start) * block;
            let dst = c * len * block;
            out.data[dst..dst + len * block].copy_from_slice(&self.data[src..src + len * block]);
        }
        Ok(out)
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = f64::from(*v as f32);
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.dims().to_vec(), self.data.clone()).expect("sequence layout")
    }
}
