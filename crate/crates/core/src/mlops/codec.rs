//! Model state blobs exchanged through the parameter server.
//!
//! ```text
//! blob := tag:u8 | format:u8 | body
//! tag  := 1 k-means | 2 isolation forest | 3 autoencoder
//! ```
//! Integers are little-endian, floats little-endian IEEE-754 doubles.

use bytes::{BufMut, Bytes, BytesMut};

use super::{AeState, IForestState, ITree, KMeansState, ModelError, Node};

const TAG_KMEANS: u8 = 1;
const TAG_IFOREST: u8 = 2;
const TAG_AUTOENCODER: u8 = 3;
const FORMAT: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    KMeans(KMeansState),
    IForest(IForestState),
    Autoencoder(AeState),
}

impl ModelState {
    pub fn name(&self) -> &'static str {
        match self {
            ModelState::KMeans(_) => "kmeans",
            ModelState::IForest(_) => "iforest",
            ModelState::Autoencoder(_) => "autoencoder",
        }
    }
}

fn put_f64s(b: &mut BytesMut, xs: &[f64]) {
    b.put_u32_le(xs.len() as u32);
    for x in xs {
        b.put_f64_le(*x);
    }
}

pub fn serialize_state(state: &ModelState) -> Bytes {
    let mut b = BytesMut::new();
    match state {
        ModelState::KMeans(s) => {
            b.put_u8(TAG_KMEANS);
            b.put_u8(FORMAT);
            b.put_u32_le(s.k as u32);
            b.put_u32_le(s.dim as u32);
            b.put_u64_le(s.seed);
            b.put_f64_le(s.threshold);
            b.put_u32_le(s.counts.len() as u32);
            for c in &s.counts {
                b.put_u64_le(*c);
            }
            put_f64s(&mut b, &s.centroids);
        }
        ModelState::IForest(s) => {
            b.put_u8(TAG_IFOREST);
            b.put_u8(FORMAT);
            b.put_u32_le(s.dim as u32);
            b.put_u32_le(s.subsample as u32);
            b.put_u32_le(s.height_limit as u32);
            b.put_f64_le(s.margin);
            b.put_u64_le(s.seed);
            b.put_u32_le(s.trees.len() as u32);
            for t in &s.trees {
                b.put_u32_le(t.nodes.len() as u32);
                for n in &t.nodes {
                    match *n {
                        Node::Leaf { size } => {
                            b.put_u8(0);
                            b.put_u64_le(size);
                        }
                        Node::Split {
                            feature,
                            value,
                            left,
                            right,
                        } => {
                            b.put_u8(1);
                            b.put_u32_le(feature);
                            b.put_f64_le(value);
                            b.put_u32_le(left);
                            b.put_u32_le(right);
                        }
                    }
                }
            }
        }
        ModelState::Autoencoder(s) => {
            b.put_u8(TAG_AUTOENCODER);
            b.put_u8(FORMAT);
            b.put_u32_le(s.layer_dims.len() as u32);
            for d in &s.layer_dims {
                b.put_u32_le(*d as u32);
            }
            b.put_f64_le(s.learning_rate);
            b.put_f64_le(s.threshold);
            for w in &s.weights {
                put_f64s(&mut b, w);
            }
            for bias in &s.biases {
                put_f64s(&mut b, bias);
            }
        }
    }
    b.freeze()
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::TruncatedBlob(format!(
                "needed {n} more bytes, {} left",
                self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, ModelError> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn corrupt(msg: &str) -> ModelError {
    ModelError::TruncatedBlob(msg.to_string())
}

pub fn deserialize_state(blob: &[u8]) -> Result<ModelState, ModelError> {
    let mut c = Cursor { buf: blob };
    let tag = c.u8()?;
    if !matches!(tag, TAG_KMEANS | TAG_IFOREST | TAG_AUTOENCODER) {
        return Err(ModelError::UnknownModelTag(tag));
    }
    let format = c.u8()?;
    if format != FORMAT {
        return Err(corrupt(&format!("unsupported format version {format}")));
    }
    let state = match tag {
        TAG_KMEANS => {
            let k = c.u32()? as usize;
            let dim = c.u32()? as usize;
            let seed = c.u64()?;
            let threshold = c.f64()?;
            let n = c.u32()? as usize;
            let counts = (0..n).map(|_| c.u64()).collect::<Result<Vec<_>, _>>()?;
            let centroids = c.f64s()?;
            if k == 0 || dim == 0 || !(counts.is_empty() || counts.len() == k) || centroids.len() != counts.len() * dim {
                return Err(corrupt("k-means shape mismatch"));
            }
            ModelState::KMeans(KMeansState {
                k,
                dim,
                seed,
                centroids,
                counts,
                threshold,
            })
        }
        TAG_IFOREST => {
            let dim = c.u32()? as usize;
            let subsample = c.u32()? as usize;
            let height_limit = c.u32()? as usize;
            let margin = c.f64()?;
            let seed = c.u64()?;
            let tree_count = c.u32()? as usize;
            let mut trees = Vec::with_capacity(tree_count.min(4096));
            for _ in 0..tree_count {
                let n = c.u32()? as usize;
                let mut nodes = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    nodes.push(match c.u8()? {
                        0 => Node::Leaf { size: c.u64()? },
                        1 => {
                            let feature = c.u32()?;
                            let value = c.f64()?;
                            let left = c.u32()?;
                            let right = c.u32()?;
                            if feature as usize >= dim || left as usize >= n || right as usize >= n {
                                return Err(corrupt("split node out of range"));
                            }
                            Node::Split {
                                feature,
                                value,
                                left,
                                right,
                            }
                        }
                        k => return Err(corrupt(&format!("bad node kind {k}"))),
                    });
                }
                if nodes.is_empty() {
                    return Err(corrupt("empty tree"));
                }
                trees.push(ITree { nodes });
            }
            ModelState::IForest(IForestState {
                dim,
                subsample,
                height_limit,
                margin,
                seed,
                trees,
            })
        }
        _ => {
            let layers = c.u32()? as usize;
            if !(2..=64).contains(&layers) {
                return Err(corrupt("bad layer count"));
            }
            let layer_dims = (0..layers)
                .map(|_| c.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let learning_rate = c.f64()?;
            let threshold = c.f64()?;
            let weights = (1..layers).map(|_| c.f64s()).collect::<Result<Vec<_>, _>>()?;
            let biases = (1..layers).map(|_| c.f64s()).collect::<Result<Vec<_>, _>>()?;
            for (l, w) in layer_dims.windows(2).enumerate() {
                if weights[l].len() != w[0] * w[1] || biases[l].len() != w[1] {
                    return Err(corrupt("autoencoder shape mismatch"));
                }
            }
            ModelState::Autoencoder(AeState {
                layer_dims,
                weights,
                biases,
                learning_rate,
                threshold,
            })
        }
    };
    if !c.buf.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(state)
}
