use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseLayer};
use super::lstm::LstmLayer;
use super::{DeepMilError, InstanceIntensities, MilModel, MilNet, Pooling, Result, SeqNet};
use crate::features::FeatureKind;

/// First four bytes of a network parameter file.
pub const NETWORK_MAGIC: &[u8; 4] = b"EMNN";
const NETWORK_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Either trained architecture, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkFile {
    Mil(MilNet),
    Seq(SeqNet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
enum Architecture {
    Milnet {
        input_dim: usize,
        hidden: Vec<usize>,
        pooling: Pooling,
    },
    Seqnet {
        input_dim: usize,
        segments: usize,
        lstm_hidden: usize,
        head: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    architecture: Architecture,
    feature_kind: FeatureKind,
    output_scale: f64,
    parameters: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

impl NetworkFile {
    fn model(&self) -> &dyn MilModelObject {
        match self {
            NetworkFile::Mil(n) => n,
            NetworkFile::Seq(n) => n,
        }
    }

    pub fn predict(&self, bag: ArrayView2<f64>) -> Result<f64> {
        self.model().predict_dyn(bag)
    }

    pub fn localize(&self, bag: ArrayView2<f64>) -> Result<InstanceIntensities> {
        self.model().localize_dyn(bag)
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NetworkFile::Mil(n) => n.input_dim(),
            NetworkFile::Seq(n) => n.input_dim(),
        }
    }

    fn architecture(&self) -> Architecture {
        match self {
            NetworkFile::Mil(n) => Architecture::Milnet {
                input_dim: n.input_dim(),
                hidden: n.layers[..n.layers.len() - 1].iter().map(|l| l.outputs()).collect(),
                pooling: n.pooling,
            },
            NetworkFile::Seq(n) => Architecture::Seqnet {
                input_dim: n.input_dim(),
                segments: n.segments(),
                lstm_hidden: n.lstm.hidden(),
                head: n.head[..n.head.len() - 1].iter().map(|l| l.outputs()).collect(),
            },
        }
    }

    /// Writes the parameters to `path` and the architecture to
    /// `<path>.json`.
    pub fn save(&self, path: &Path, feature_kind: FeatureKind) -> Result<()> {
        let (params, scale) = match self {
            NetworkFile::Mil(n) => (n.flat_params(), n.output_scale),
            NetworkFile::Seq(n) => (n.flat_params(), n.output_scale),
        };
        let code = match self {
            NetworkFile::Mil(_) => 0u32,
            NetworkFile::Seq(_) => 1u32,
        };
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * params.len());
        buf.extend_from_slice(NETWORK_MAGIC);
        for v in [NETWORK_VERSION, code, params.len() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &params {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| DeepMilError::Io { path: p, source }
        };
        std::fs::write(path, buf).map_err(io(path))?;
        let sidecar = Sidecar {
            architecture: self.architecture(),
            feature_kind,
            output_scale: scale,
            parameters: params.len(),
        };
        let side = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(&side, text).map_err(io(&side))
    }

    /// Reads a network written by [`NetworkFile::save`] and the feature
    /// kind it was trained on.
    pub fn load(path: &Path) -> Result<(NetworkFile, FeatureKind)> {
        let bad = |p: &Path, m: String| DeepMilError::Format {
            path: p.to_path_buf(),
            message: m,
        };
        let bytes = std::fs::read(path).map_err(|source| DeepMilError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() < HEADER_LEN || &bytes[..4] != NETWORK_MAGIC {
            return Err(bad(path, "not a network parameter file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        if u32_at(4) != NETWORK_VERSION {
            return Err(bad(path, format!("unsupported network file version {}", u32_at(4))));
        }
        let (code, count) = (u32_at(8), u32_at(12) as usize);
        if bytes.len() != HEADER_LEN + 8 * count {
            return Err(bad(path, "network file has the wrong length".into()));
        }
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|source| DeepMilError::Io {
            path: side.clone(),
            source,
        })?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| bad(&side, e.to_string()))?;
        let mut net = match &sidecar.architecture {
            Architecture::Milnet {
                input_dim,
                hidden,
                pooling,
            } if code == 0 => NetworkFile::Mil(zero_milnet(*input_dim, hidden, *pooling)),
            Architecture::Seqnet {
                input_dim,
                segments,
                lstm_hidden,
                head,
            } if code == 1 => NetworkFile::Seq(zero_seqnet(*input_dim, *segments, *lstm_hidden, head)),
            _ => return Err(bad(&side, "sidecar names a different architecture".into())),
        };
        let params: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let expected = net.model().param_count_dyn();
        if expected != count || sidecar.parameters != count {
            return Err(bad(
                path,
                format!("{count} stored parameters, architecture needs {expected}"),
            ));
        }
        match &mut net {
            NetworkFile::Mil(n) => {
                n.set_flat_params(&params);
                n.output_scale = sidecar.output_scale;
            }
            NetworkFile::Seq(n) => {
                n.set_flat_params(&params);
                n.output_scale = sidecar.output_scale;
            }
        }
        Ok((net, sidecar.feature_kind))
    }
}

fn zero_milnet(input_dim: usize, hidden: &[usize], pooling: Pooling) -> MilNet {
    let mut layers = Vec::new();
    let mut inputs = input_dim;
    for &w in hidden {
        layers.push(DenseLayer::zeros(inputs, w, Activation::Relu));
        inputs = w;
    }
    layers.push(DenseLayer::zeros(inputs, 1, Activation::Linear));
    MilNet {
        layers,
        pooling,
        output_scale: 1.0,
    }
}

fn zero_seqnet(input_dim: usize, segments: usize, hidden: usize, head: &[usize]) -> SeqNet {
    let mut layers = Vec::new();
    let mut inputs = segments * hidden;
    for &w in head.iter().chain(std::iter::once(&segments)) {
        layers.push(DenseLayer::zeros(inputs, w, Activation::Sigmoid));
        inputs = w;
    }
    SeqNet {
        lstm: LstmLayer::zeros(input_dim, hidden),
        head: layers,
        output_scale: 1.0,
    }
}

/// Object-safe view of [`MilModel`] for dispatch over [`NetworkFile`].
trait MilModelObject {
    fn predict_dyn(&self, bag: ArrayView2<f64>) -> Result<f64>;
    fn localize_dyn(&self, bag: ArrayView2<f64>) -> Result<InstanceIntensities>;
    fn param_count_dyn(&self) -> usize;
}

impl<T: MilModel> MilModelObject for T {
    fn predict_dyn(&self, bag: ArrayView2<f64>) -> Result<f64> {
        self.predict(bag)
    }

    fn localize_dyn(&self, bag: ArrayView2<f64>) -> Result<InstanceIntensities> {
        self.localize(bag)
    }

    fn param_count_dyn(&self) -> usize {
        self.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn milnet_round_trip() {
        let mut net = MilNet::new(5, &[7, 3], Pooling::TopK { k: 2 }, 4).unwrap();
        net.output_scale = 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let file = NetworkFile::Mil(net);
        file.save(&path, FeatureKind::PoseGaze).unwrap();
        let (back, kind) = NetworkFile::load(&path).unwrap();
        assert_eq!(kind, FeatureKind::PoseGaze);
        assert_eq!(back, file);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("net.bin.json")).unwrap()).unwrap();
        assert_eq!(meta["model"], "milnet");
        assert_eq!(meta["pooling"]["kind"], "topk");
    }

    #[test]
    fn seqnet_round_trip_predicts_identically() {
        let net = SeqNet::new(3, 4, 5, &[6, 2], 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.bin");
        let file = NetworkFile::Seq(net);
        file.save(&path, FeatureKind::Synthetic).unwrap();
        let (back, _) = NetworkFile::load(&path).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1);
        assert_eq!(back.predict(x.view()).unwrap(), file.predict(x.view()).unwrap());
        assert_eq!(back.localize(x.view()).unwrap(), file.localize(x.view()).unwrap());
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        NetworkFile::Mil(MilNet::new(2, &[3], Pooling::Mean, 0).unwrap())
            .save(&path, FeatureKind::Synthetic)
            .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(NetworkFile::load(&path), Err(DeepMilError::Format { .. })));
        std::fs::write(&path, b"XXXX0000000000000000").unwrap();
        assert!(matches!(NetworkFile::load(&path), Err(DeepMilError::Format { .. })));
    }
}
