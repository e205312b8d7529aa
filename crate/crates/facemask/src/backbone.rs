//! Feature extraction behind the classifier head.
//!
//! Features come from one of two sources: an [`EmbeddingStore`] holding
//! precomputed feature maps keyed by image path (the file format lets any
//! external InceptionV3 implementation hand its penultimate-layer output
//! across the process boundary), or a [`BuiltinBackbone`] — a tiny frozen
//! convolutional network that makes the whole pipeline runnable without any
//! pretrained weights.

use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{decode_image, ImageBuffer};

/// H×W×C tensor of 32-bit floats, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    /// Builds a map, checking the value count and that every entry is finite.
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape("feature map dimensions must be positive"));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::shape("feature map dimensions overflow"))?;
        if values.len() != expected {
            return Err(Error::shape(format!(
                "feature map expects {expected} values for {height}x{width}x{channels}, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!(
                "feature map value at index {pos} is not finite"
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Value at row `y`, column `x`, channel `c`.
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.values[(y * self.width + x) * self.channels + c]
    }
}

const EMBEDDING_MAGIC: &[u8; 8] = b"FMDEMB1\n";
// Per-record value cap; a corrupt header should fail fast, not allocate.
const MAX_RECORD_VALUES: u64 = 1 << 28;

/// Precomputed feature maps keyed by image path, all sharing one shape.
///
/// Iteration order is insertion order, so save/load round-trips preserve
/// record order byte for byte.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dims: (usize, usize, usize),
    entries: IndexMap<String, FeatureMap>,
}

impl EmbeddingStore {
    pub fn new(dims: (usize, usize, usize)) -> Self {
        EmbeddingStore {
            dims,
            entries: IndexMap::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<&FeatureMap> {
        self.entries.get(key)
    }

    /// Adds a record; its dims must match the store's and keys are unique.
    pub fn insert(&mut self, key: impl Into<String>, map: FeatureMap) -> Result<()> {
        let key = key.into();
        if map.dims() != self.dims {
            return Err(Error::Embedding {
                message: format!(
                    "record {key:?} has dims {:?}, store expects {:?}",
                    map.dims(),
                    self.dims
                ),
            });
        }
        if key.len() > u16::MAX as usize {
            return Err(Error::Embedding {
                message: format!("key longer than {} bytes", u16::MAX),
            });
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Embedding {
                message: format!("duplicate key {key:?}"),
            });
        }
        self.entries.insert(key, map);
        Ok(())
    }

    /// Reads a store from the binary embedding format. See [`Self::save`]
    /// for the layout.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != EMBEDDING_MAGIC {
            return Err(Error::Embedding {
                message: format!("bad magic {magic:?}, expected {EMBEDDING_MAGIC:?}"),
            });
        }
        let count = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let c = r.u32()? as usize;
        let per_record = (h as u64) * (w as u64) * (c as u64);
        if per_record == 0 || per_record > MAX_RECORD_VALUES {
            return Err(Error::Embedding {
                message: format!("unreasonable record dims {h}x{w}x{c}"),
            });
        }
        let mut store = EmbeddingStore::new((h, w, c));
        for i in 0..count {
            let key_len = r.u16()? as usize;
            let key = String::from_utf8(r.take(key_len)?.to_vec()).map_err(|_| {
                Error::Embedding {
                    message: format!("record {i}: key is not valid UTF-8"),
                }
            })?;
            let mut values = Vec::with_capacity(per_record as usize);
            for _ in 0..per_record {
                values.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            let map = FeatureMap::new(h, w, c, values).map_err(|e| Error::Embedding {
                message: format!("record {i} ({key:?}): {e}"),
            })?;
            store.insert(key, map)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Embedding {
                message: format!("{} trailing bytes after last record", bytes.len() - r.pos),
            });
        }
        Ok(store)
    }

    /// Writes the store: magic `FMDEMB1\n`, then u32 record count, u32 H,
    /// u32 W, u32 C, then per record a u16 key length, the UTF-8 key, and
    /// H·W·C little-endian f32 values.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for d in [self.dims.0, self.dims.1, self.dims.2] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for (key, map) in &self.entries {
            w.write_all(&(key.len() as u16).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            for v in map.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Embedding {
                message: format!("truncated file: needed {n} bytes at offset {}", self.pos),
            }),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// One 3×3 convolution stage of the builtin backbone.
///
/// `weights` layout: `[out_channel][in_channel][ky][kx]`, innermost last.
#[derive(Debug, Clone)]
pub struct ConvStage {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Input side length the builtin backbone convolves down from.
pub const BUILTIN_INPUT_SIDE: usize = 224;
/// Output dims of the builtin backbone.
pub const BUILTIN_OUTPUT_DIMS: (usize, usize, usize) = (5, 5, 32);

const BUILTIN_SEED: u64 = 0xFACE_CAFE;

/// A frozen five-stage convolutional feature extractor.
///
/// Each stage is a 3×3 convolution with "same" padding followed by ReLU;
/// strides 2,2,2,2,3 take a 224×224 input through 112→56→28→14 down to 5×5,
/// over channels 3→8→16→32→32→32. Weights and biases are drawn once from a
/// fixed-seed uniform(−0.1, 0.1) stream, so the network is a constant: it is
/// never trained, and identical inputs produce bit-identical outputs.
#[derive(Debug, Clone)]
pub struct BuiltinBackbone {
    stages: Vec<ConvStage>,
}

impl Default for BuiltinBackbone {
    fn default() -> Self {
        Self::new()
    }
}

impl BuiltinBackbone {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(BUILTIN_SEED);
        let channels = [3usize, 8, 16, 32, 32, 32];
        let strides = [2usize, 2, 2, 2, 3];
        let stages = (0..5)
            .map(|i| {
                let (cin, cout) = (channels[i], channels[i + 1]);
                let weights = (0..cout * cin * 9)
                    .map(|_| rng.gen_range(-0.1..0.1))
                    .collect();
                let bias = (0..cout).map(|_| rng.gen_range(-0.1..0.1)).collect();
                ConvStage {
                    in_channels: cin,
                    out_channels: cout,
                    stride: strides[i],
                    weights,
                    bias,
                }
            })
            .collect();
        BuiltinBackbone { stages }
    }

    pub fn stages(&self) -> &[ConvStage] {
        &self.stages
    }

    /// Runs the frozen network over a 224×224 image (1-channel inputs are
    /// replicated to 3). Pixels are scaled to [0,1] before the first stage.
    pub fn forward(&self, img: &ImageBuffer) -> Result<FeatureMap> {
        if (img.width(), img.height()) != (BUILTIN_INPUT_SIDE, BUILTIN_INPUT_SIDE) {
            return Err(Error::shape(format!(
                "builtin backbone expects {BUILTIN_INPUT_SIDE}x{BUILTIN_INPUT_SIDE} input, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let rgb = img.to_rgb();
        let mut h = BUILTIN_INPUT_SIDE;
        let mut w = BUILTIN_INPUT_SIDE;
        let mut c = 3usize;
        let mut act: Vec<f32> = rgb.data().iter().map(|&v| v as f32 / 255.0).collect();
        for stage in &self.stages {
            let (next, nh, nw) = conv_same_relu(&act, h, w, c, stage);
            act = next;
            h = nh;
            w = nw;
            c = stage.out_channels;
        }
        FeatureMap::new(h, w, c, act)
    }
}

/// 3×3 same-padding convolution plus ReLU over a row-major H×W×C activation.
fn conv_same_relu(
    input: &[f32],
    h: usize,
    w: usize,
    c: usize,
    stage: &ConvStage,
) -> (Vec<f32>, usize, usize) {
    debug_assert_eq!(c, stage.in_channels);
    let s = stage.stride;
    let oh = h.div_ceil(s);
    let ow = w.div_ceil(s);
    // "Same" padding: distribute max((out-1)*stride + kernel - in, 0) with
    // the smaller half in front.
    let pad_y = ((oh - 1) * s + 3).saturating_sub(h) / 2;
    let pad_x = ((ow - 1) * s + 3).saturating_sub(w) / 2;
    let mut out = vec![0.0f32; oh * ow * stage.out_channels];
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..stage.out_channels {
                let mut acc = stage.bias[oc] as f64;
                for ic in 0..c {
                    for ky in 0..3 {
                        let iy = (oy * s + ky) as isize - pad_y as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * s + kx) as isize - pad_x as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let v = input[(iy as usize * w + ix as usize) * c + ic];
                            let wgt = stage.weights[((oc * c + ic) * 3 + ky) * 3 + kx];
                            acc += v as f64 * wgt as f64;
                        }
                    }
                }
                out[(oy * ow + ox) * stage.out_channels + oc] = (acc.max(0.0)) as f32;
            }
        }
    }
    (out, oh, ow)
}

/// Where feature maps come from.
pub enum Backbone {
    /// Lookups into a precomputed store; keys are manifest record paths (or
    /// `<path>#crop<k>` for inference crops).
    Embedding(EmbeddingStore),
    /// The self-contained convolutional network.
    Builtin(BuiltinBackbone),
}

impl Backbone {
    /// Shape of every feature map this backbone produces.
    pub fn feature_dims(&self) -> (usize, usize, usize) {
        match self {
            Backbone::Embedding(store) => store.dims(),
            Backbone::Builtin(_) => BUILTIN_OUTPUT_DIMS,
        }
    }

    /// Features for a manifest record. The embedding source looks the path
    /// up verbatim; the builtin source decodes and convolves the image file.
    pub fn features_for_path(&self, path: &str) -> Result<FeatureMap> {
        match self {
            Backbone::Embedding(store) => store
                .get(path)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding { key: path.into() }),
            Backbone::Builtin(net) => net.forward(&decode_image(path)?),
        }
    }

    /// Features for an in-memory image under an explicit lookup key (used
    /// for inference crops, which have no file of their own).
    pub fn features_for_image(&self, key: &str, img: &ImageBuffer) -> Result<FeatureMap> {
        match self {
            Backbone::Embedding(store) => store
                .get(key)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding { key: key.into() }),
            Backbone::Builtin(net) => net.forward(img),
        }
    }
}
