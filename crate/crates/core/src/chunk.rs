//! Streaming machinery: chunk attention masks, latency accounting, and
//! incremental chunk-by-chunk inference that reproduces the masked
//! full-sequence forward pass.

use thiserror::Error;

use crate::autodiff::{Tape, Tensor};
use crate::model::{AcousticModel, Mask, ModelError};

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("non-streaming")]
    NonStreaming,
    #[error("bad chunk spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ChunkError>;

/// Frame count that may be unbounded, written `(hist, chunk)` with `inf`
/// for the full-context configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frames {
    Finite(usize),
    Infinite,
}

impl Frames {
    pub fn finite(self) -> Option<usize> {
        match self {
            Frames::Finite(n) => Some(n),
            Frames::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkSpec {
    pub hist_frames: Frames,
    pub chunk_frames: Frames,
    pub frame_duration_ms: f64,
}

impl ChunkSpec {
    pub fn new(hist_frames: Frames, chunk_frames: Frames, frame_duration_ms: f64) -> Result<Self> {
        if chunk_frames == Frames::Finite(0) {
            return Err(ChunkError::InvalidSpec("chunk_frames must be >= 1".into()));
        }
        if !(frame_duration_ms > 0.0) {
            return Err(ChunkError::InvalidSpec("frame duration must be positive".into()));
        }
        Ok(ChunkSpec { hist_frames, chunk_frames, frame_duration_ms })
    }

    pub fn full_context(frame_duration_ms: f64) -> Self {
        ChunkSpec { hist_frames: Frames::Infinite, chunk_frames: Frames::Infinite, frame_duration_ms }
    }
}

/// Chunk attention mask: frames are split into consecutive chunks of
/// `chunk_frames` (last may be short); a frame may attend to its whole chunk
/// plus the `hist_frames` frames immediately before the chunk start. An
/// infinite chunk yields the all-true mask.
pub fn build_chunk_mask(total_frames: usize, spec: &ChunkSpec) -> Mask {
    assert!(total_frames >= 1);
    let chunk = match spec.chunk_frames.finite() {
        Some(c) => c,
        None => return Mask::all_true(total_frames),
    };
    let mut mask = Mask::new(total_frames, vec![false; total_frames * total_frames]);
    for t in 0..total_frames {
        let start = (t / chunk) * chunk;
        let end = (start + chunk).min(total_frames);
        let lo = match spec.hist_frames.finite() {
            Some(h) => start.saturating_sub(h),
            None => 0,
        };
        for j in lo..end {
            mask.set(t, j, true);
        }
    }
    mask
}

/// Average look-ahead: a frame in the middle of a chunk waits half a chunk
/// of future frames, so `chunk_frames * frame_duration_ms / 2`.
pub fn avg_lookahead_ms(spec: &ChunkSpec) -> Result<f64> {
    match spec.chunk_frames.finite() {
        Some(c) => Ok(c as f64 * spec.frame_duration_ms / 2.0),
        None => Err(ChunkError::NonStreaming),
    }
}

struct ConvState {
    /// Unconsumed rows of this layer's input stream, beginning with the
    /// causal left padding; always fewer than one kernel of backlog after
    /// each step.
    buffer: Tensor,
}

/// One incremental decoding session. Audio is pushed in arbitrary pieces;
/// prediction-layer rows come out as soon as their chunk is complete. Each
/// transformer block caches at most `hist_frames` rows of its own input, and
/// the CNN layers keep under one kernel of backlog each, so the session never
/// touches audio beyond what has been pushed.
pub struct StreamSession<'m> {
    model: &'m AcousticModel,
    hist: usize,
    chunk: usize,
    /// Raw-sample backlog for the first CNN layer, pre-seeded with padding.
    samples: Vec<f64>,
    conv: Vec<ConvState>,
    /// CNN output rows not yet grouped into a chunk.
    pending: Tensor,
    /// Per-block cache of the last `hist` input rows.
    caches: Vec<Tensor>,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m AcousticModel, spec: &ChunkSpec) -> Result<Self> {
        let (hist, chunk) = match (spec.hist_frames.finite(), spec.chunk_frames.finite()) {
            (Some(h), Some(c)) => (h, c),
            _ => return Err(ChunkError::NonStreaming),
        };
        let cfg = model.config();
        let conv = (1..cfg.cnn_layers())
            .map(|l| ConvState {
                buffer: Tensor::zeros(cfg.cnn_kernels[l] - cfg.cnn_strides[l], cfg.cnn_in_channels(l)),
            })
            .collect();
        Ok(StreamSession {
            model,
            hist,
            chunk,
            samples: vec![0.0; cfg.cnn_kernels[0] - cfg.cnn_strides[0]],
            conv,
            pending: Tensor::zeros(0, cfg.cnn_channels_rest),
            caches: (0..cfg.blocks).map(|_| Tensor::zeros(0, cfg.encoder_dim)).collect(),
        })
    }

    fn append_rows(dst: &mut Tensor, src: &Tensor, from_row: usize) {
        let cols = dst.cols();
        assert_eq!(cols, src.cols());
        let mut data = dst.data().to_vec();
        data.extend_from_slice(&src.data()[from_row * cols..]);
        *dst = Tensor::new(vec![data.len() / cols, cols], data);
    }

    fn keep_last_rows(t: &Tensor, n: usize) -> Tensor {
        let rows = t.rows();
        let keep = n.min(rows);
        let cols = t.cols();
        Tensor::new(vec![keep, cols], t.data()[(rows - keep) * cols..].to_vec())
    }

    /// Run the CNN over the backlog, consuming every row that has a complete
    /// window; returns freshly produced feature rows.
    fn advance_cnn(&mut self) -> Result<Option<Tensor>> {
        let cfg = self.model.config().clone();
        let (k0, s0) = (cfg.cnn_kernels[0], cfg.cnn_strides[0]);
        if self.samples.len() < k0 {
            return Ok(None);
        }
        let mut tape = Tape::inference();
        let vars = self.model.bind(&mut tape, false);
        let o0 = (self.samples.len() - k0) / s0 + 1;
        let mut h = self.model.conv_first_on(&mut tape, &vars, &self.samples)?;
        self.samples.drain(..o0 * s0);
        for l in 1..cfg.cnn_layers() {
            let st = &mut self.conv[l - 1];
            let prev = tape.constant(st.buffer.clone());
            let cat = if st.buffer.rows() > 0 {
                tape.concat_rows(&[prev, h]).map_err(ModelError::from)?
            } else {
                h
            };
            let (k, s) = (cfg.cnn_kernels[l], cfg.cnn_strides[l]);
            let l_in = tape.value(cat).rows();
            if l_in < k {
                st.buffer = tape.value(cat).clone();
                return Ok(None);
            }
            let o = (l_in - k) / s + 1;
            let out = self.model.conv_layer_on(&mut tape, &vars, l, cat)?;
            let cat_val = tape.value(cat).clone();
            st.buffer = Tensor::new(
                vec![l_in - o * s, cfg.cnn_in_channels(l)],
                cat_val.data()[o * s * cfg.cnn_in_channels(l)..].to_vec(),
            );
            h = out;
        }
        Ok(Some(tape.value(h).clone()))
    }

    /// Run one complete (or final short) chunk of feature rows through the
    /// transformer, updating the per-block history caches.
    fn process_chunk(&mut self, rows: usize) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let vars = self.model.bind(&mut tape, false);
        let cols = self.pending.cols();
        let feats = tape.constant(Tensor::new(
            vec![rows, cols],
            self.pending.data()[..rows * cols].to_vec(),
        ));
        self.pending = Tensor::new(
            vec![self.pending.rows() - rows, cols],
            self.pending.data()[rows * cols..].to_vec(),
        );
        let mut x = self.model.input_proj_on(&mut tape, &vars, feats)?;
        for b in 0..self.model.config().blocks {
            let x_val = tape.value(x).clone();
            let hist = if self.caches[b].rows() > 0 {
                Some(tape.constant(self.caches[b].clone()))
            } else {
                None
            };
            let out = self.model.block_on(&mut tape, &vars, b, x, hist, None)?;
            let mut next_cache = self.caches[b].clone();
            Self::append_rows(&mut next_cache, &x_val, 0);
            self.caches[b] = Self::keep_last_rows(&next_cache, self.hist);
            x = out;
        }
        let out = self.model.predict_on(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }

    /// Feed more audio; returns prediction rows for every chunk completed by
    /// this push.
    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<Tensor>> {
        self.samples.extend_from_slice(samples);
        if let Some(feats) = self.advance_cnn()? {
            Self::append_rows(&mut self.pending, &feats, 0);
        }
        let mut out = Vec::new();
        while self.pending.rows() >= self.chunk {
            out.push(self.process_chunk(self.chunk)?);
        }
        Ok(out)
    }

    /// Flush the final short chunk, if any.
    pub fn finish(mut self) -> Result<Option<Tensor>> {
        let rows = self.pending.rows();
        if rows == 0 {
            return Ok(None);
        }
        Ok(Some(self.process_chunk(rows)?))
    }
}

/// Chunk-by-chunk inference over a complete waveform: only the audio up to
/// the current chunk's receptive field is handed to the session at each step.
/// The concatenated emissions match `forward` under `build_chunk_mask`.
pub fn stream_infer(model: &AcousticModel, waveform: &[f64], spec: &ChunkSpec) -> Result<Tensor> {
    let stride = model.config().total_stride();
    if waveform.len() < stride {
        return Err(ChunkError::Model(ModelError::WaveformTooShort {
            samples: waveform.len(),
            required: stride,
        }));
    }
    let chunk = spec.chunk_frames.finite().ok_or(ChunkError::NonStreaming)?;
    let mut session = StreamSession::new(model, spec)?;
    let total_frames = model.config().frames_for_samples(waveform.len());
    let mut parts: Vec<Tensor> = Vec::new();
    let mut consumed = 0usize;
    let mut frame = 0usize;
    while frame < total_frames {
        let chunk_end_frame = (frame + chunk).min(total_frames);
        let need = chunk_end_frame * stride;
        parts.extend(session.push(&waveform[consumed..need])?);
        consumed = need;
        frame = chunk_end_frame;
    }
    parts.extend(session.finish()?);
    let m = model.config().num_pdfs;
    let mut data = Vec::with_capacity(total_frames * m);
    for p in &parts {
        data.extend_from_slice(p.data());
    }
    assert_eq!(data.len(), total_frames * m, "emitted frames must cover the utterance");
    Ok(Tensor::new(vec![total_frames, m], data))
}
