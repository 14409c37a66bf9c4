use super::{Arch, ModelConfig};
use crate::error::{Error, Result};

/// Append-only matrix of fixed-width rows with front truncation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowBuffer {
    width: usize,
    data: Vec<f32>,
}

impl RowBuffer {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            data: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub(crate) fn replace(&mut self, data: Vec<f32>) {
        debug_assert_eq!(data.len() % self.width.max(1), 0);
        self.data = data;
    }

    /// Keeps only the last `keep` rows.
    pub fn keep_last(&mut self, keep: usize) {
        let rows = self.rows();
        if rows > keep {
            self.data.drain(..(rows - keep) * self.width);
        }
    }
}

/// Per-layer key/value rows for past positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvCache {
    pub keys: RowBuffer,
    pub values: RowBuffer,
}

/// Everything a model carries from one call to the next.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelState {
    /// Per-layer `(h, c)` vectors (LSTM and LSTMA).
    pub lstm: Vec<(Vec<f32>, Vec<f32>)>,
    /// Final-layer hidden states of past positions (LSTMA).
    pub attn_memory: RowBuffer,
    /// Per-layer keys and values of past positions (Transformer).
    pub kv_cache: Vec<KvCache>,
    /// Tokens consumed so far.
    pub position_offset: usize,
}

impl ModelState {
    pub fn fresh(c: &ModelConfig) -> Self {
        let h = c.hidden_dim;
        match c.arch {
            Arch::Lstm | Arch::Lstma => Self {
                lstm: vec![(vec![0.0; h], vec![0.0; h]); c.num_layers],
                attn_memory: RowBuffer::new(h),
                ..Self::default()
            },
            Arch::Transformer => Self {
                kv_cache: (0..c.num_layers)
                    .map(|_| KvCache {
                        keys: RowBuffer::new(h),
                        values: RowBuffer::new(h),
                    })
                    .collect(),
                ..Self::default()
            },
        }
    }

    pub fn is_fresh(&self) -> bool {
        self.position_offset == 0
    }

    /// Rows of attention context carried into the next call.
    pub fn memory_len(&self) -> usize {
        self.kv_cache
            .first()
            .map_or(self.attn_memory.rows(), |c| c.keys.rows())
    }

    pub(crate) fn check_compatible(&self, c: &ModelConfig) -> Result<()> {
        let h = c.hidden_dim;
        let ok = match c.arch {
            Arch::Lstm | Arch::Lstma => {
                self.lstm.len() == c.num_layers
                    && self.lstm.iter().all(|(a, b)| a.len() == h && b.len() == h)
                    && (c.arch == Arch::Lstm || self.attn_memory.width() == h)
            }
            Arch::Transformer => {
                self.kv_cache.len() == c.num_layers
                    && self.kv_cache.iter().all(|k| k.keys.width() == h && k.values.width() == h)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "model state does not match a {} model with {} layers of width {}",
                c.arch, c.num_layers, h
            )))
        }
    }
}
