use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

/// On-disk form of a float array: shape plus little-endian `f64` bytes in
/// base64, so values survive a round trip bit for bit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

const DTYPE: &str = "f64le";

impl TensorBlob {
    pub fn encode(shape: Vec<usize>, values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            shape,
            dtype: DTYPE.into(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        if self.dtype != DTYPE {
            return Err(Error::format(format!("unsupported tensor dtype {:?}", self.dtype)));
        }
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::format(format!("bad tensor payload: {e}")))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != expected * 8 {
            return Err(Error::format(format!(
                "tensor of shape {:?} carries {} bytes",
                self.shape,
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

impl From<DenseMatrix> for TensorBlob {
    fn from(m: DenseMatrix) -> Self {
        TensorBlob::encode(vec![m.rows(), m.cols()], m.data())
    }
}

impl TryFrom<TensorBlob> for DenseMatrix {
    type Error = Error;

    fn try_from(t: TensorBlob) -> Result<Self> {
        let &[rows, cols] = t.shape.as_slice() else {
            return Err(Error::format(format!("matrix needs a 2-d shape, got {:?}", t.shape)));
        };
        DenseMatrix::new(rows, cols, t.decode()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_survive_a_json_round_trip() {
        let m = DenseMatrix::new(2, 3, vec![0.1, -0.0, 1e-300, 3.5, f64::MAX, -2.25]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"shape\":[2,3]"));
        let back: DenseMatrix = serde_json::from_str(&json).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_blobs_are_rejected() {
        let mut t = TensorBlob::encode(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]);
        t.shape = vec![3, 2];
        assert!(DenseMatrix::try_from(t.clone()).is_err());
        t.shape = vec![4];
        assert!(DenseMatrix::try_from(t.clone()).is_err());
        t.dtype = "f32".into();
        assert!(t.decode().is_err());
    }
}
