//! The shared model container: a self-describing text header (format
//! version, kind, architecture descriptor) followed by the flat parameter
//! vector as little-endian 64-bit floats.
//!
//! Serialization is bit-exact: saving a loaded model reproduces the file
//! byte for byte, and identical training runs produce identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::flow::{CouplingLayer, FlowModel};
use crate::nn::{Activation, DenseLayer, Mlp};
use crate::reduce::{Autoencoder, PcaReducer, Reducer, ScoreKind};

pub const FORMAT_NAME: &str = "floe-model";
pub const FORMAT_VERSION: u32 = 1;

/// Any model the toolkit persists.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelContainer {
    Flow(FlowModel),
    Autoencoder { model: Autoencoder, score: ScoreKind },
    Classifier(Classifier),
    Pca(PcaReducer),
}

impl ModelContainer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelContainer::Flow(_) => "flow",
            ModelContainer::Autoencoder { .. } => "autoencoder",
            ModelContainer::Classifier(_) => "classifier",
            ModelContainer::Pca(_) => "pca",
        }
    }

    /// Interprets the container as a scoring detector.
    pub fn into_detector(self) -> Result<crate::detector::TrainedDetector> {
        match self {
            ModelContainer::Flow(m) => Ok(crate::detector::TrainedDetector::Flow(m)),
            ModelContainer::Classifier(c) => Ok(crate::detector::TrainedDetector::Classifier(c)),
            ModelContainer::Autoencoder { model, score } => {
                Ok(crate::detector::TrainedDetector::Autoencoder { model, score })
            }
            ModelContainer::Pca(_) => Err(Error::usage(
                "a PCA reducer is not a detector; point to a trained detector model",
            )),
        }
    }

    /// Interprets the container as a dimensionality reducer.
    pub fn into_reducer(self) -> Result<Reducer> {
        match self {
            ModelContainer::Autoencoder { model, .. } => Ok(Reducer::Autoencoder(model)),
            ModelContainer::Pca(p) => Ok(Reducer::Pca(p)),
            other => Err(Error::usage(format!(
                "a {} model is not a reducer",
                other.kind_name()
            ))),
        }
    }
}

fn activation_text(a: Activation) -> String {
    match a {
        Activation::Linear => "linear".into(),
        Activation::ReLU => "relu".into(),
        Activation::Sigmoid => "sigmoid".into(),
        Activation::Tanh => "tanh".into(),
        Activation::LeakyReLU(slope) => format!("leaky_relu {slope}"),
    }
}

fn write_mlp(header: &mut String, net: &Mlp) {
    let _ = writeln!(header, "mlp {}", net.layers().len());
    for layer in net.layers() {
        let _ = writeln!(
            header,
            "layer {} {} {}",
            layer.in_dim(),
            layer.out_dim(),
            activation_text(layer.activation())
        );
    }
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &ModelContainer) -> Vec<u8> {
    let mut header = format!("{FORMAT_NAME} {FORMAT_VERSION}\n");
    let _ = writeln!(header, "kind {}", model.kind_name());

    let params: Vec<f64> = match model {
        ModelContainer::Flow(flow) => {
            let _ = writeln!(header, "dimension {}", flow.dimension());
            let _ = writeln!(header, "layers {}", flow.layers().len());
            for layer in flow.layers() {
                let mask: String = layer
                    .mask()
                    .iter()
                    .map(|&m| if m { '1' } else { '0' })
                    .collect();
                let _ = writeln!(header, "coupling {mask} {}", layer.scale_clamp());
                write_mlp(&mut header, layer.scale_net());
                write_mlp(&mut header, layer.translate_net());
            }
            flow.params()
        }
        ModelContainer::Autoencoder { model, score } => {
            let _ = writeln!(
                header,
                "score {}",
                match score {
                    ScoreKind::Mae => "mae",
                    ScoreKind::Mse => "mse",
                }
            );
            write_mlp(&mut header, model.encoder());
            write_mlp(&mut header, model.decoder());
            model.params()
        }
        ModelContainer::Classifier(clf) => {
            write_mlp(&mut header, clf.net());
            clf.net().params()
        }
        ModelContainer::Pca(pca) => {
            let _ = writeln!(header, "input_dim {}", pca.input_dim());
            let _ = writeln!(header, "output_dim {}", pca.output_dim());
            let mut p = pca.mean().to_vec();
            p.extend_from_slice(pca.components());
            p
        }
    };

    let _ = writeln!(header, "params {}", params.len());
    header.push_str("data\n");
    let mut bytes = header.into_bytes();
    bytes.reserve(params.len() * 8);
    for v in &params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

struct HeaderCursor<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
    source: String,
}

impl<'a> HeaderCursor<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines.next().ok_or_else(|| Error::Format {
            path: self.source.clone(),
            message: format!("unexpected end of header at line {}", self.line_no),
        })
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.source.clone(),
            message: format!("line {}: {}", self.line_no, message.into()),
        }
    }

    /// Next line, which must start with `key`; returns the rest.
    fn expect(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .map(str::trim)
            .ok_or_else(|| self.err(format!("expected {key:?}, found {line:?}")))
    }
}

fn parse_activation(cursor: &HeaderCursor, text: &str) -> Result<Activation> {
    let mut tokens = text.split_whitespace();
    match tokens.next() {
        Some("linear") => Ok(Activation::Linear),
        Some("relu") => Ok(Activation::ReLU),
        Some("sigmoid") => Ok(Activation::Sigmoid),
        Some("tanh") => Ok(Activation::Tanh),
        Some("leaky_relu") => {
            let slope: f64 = tokens
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| cursor.err("leaky_relu needs a slope"))?;
            Ok(Activation::LeakyReLU(slope))
        }
        other => Err(cursor.err(format!("unknown activation {other:?}"))),
    }
}

fn parse_usize(cursor: &HeaderCursor, text: &str) -> Result<usize> {
    text.trim()
        .parse()
        .map_err(|_| cursor.err(format!("expected an integer, found {text:?}")))
}

/// Reads one `mlp` block into zero-initialized layers (parameters are
/// assigned from the payload afterwards).
fn read_mlp(cursor: &mut HeaderCursor) -> Result<Mlp> {
    let count_text = cursor.expect("mlp")?;
    let count = parse_usize(cursor, count_text)?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let spec = cursor.expect("layer")?;
        let mut tokens = spec.splitn(3, ' ');
        let in_dim = parse_usize(cursor, tokens.next().unwrap_or(""))?;
        let out_dim = parse_usize(cursor, tokens.next().unwrap_or(""))?;
        let act = parse_activation(cursor, tokens.next().unwrap_or(""))?;
        layers.push(DenseLayer::zeros(in_dim, out_dim, act));
    }
    Mlp::from_layers(layers)
}

/// Deserializes a model from bytes. `source` names the origin for error
/// messages.
pub fn from_bytes(bytes: &[u8], source: &str) -> Result<ModelContainer> {
    let marker = b"\ndata\n";
    let split_at = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Format {
            path: source.into(),
            message: "missing data marker".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..split_at + 1]).map_err(|_| Error::Format {
        path: source.into(),
        message: "header is not UTF-8".into(),
    })?;
    let payload = &bytes[split_at + marker.len()..];

    let mut cursor = HeaderCursor {
        lines: header.lines(),
        line_no: 0,
        source: source.to_string(),
    };

    let magic = cursor.next()?;
    let mut magic_tokens = magic.split_whitespace();
    if magic_tokens.next() != Some(FORMAT_NAME) {
        return Err(cursor.err(format!("not a {FORMAT_NAME} file")));
    }
    let version: u32 = magic_tokens
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| cursor.err("missing format version"))?;
    if version != FORMAT_VERSION {
        return Err(cursor.err(format!(
            "unsupported format version {version} (supported: {FORMAT_VERSION})"
        )));
    }

    let kind = cursor.expect("kind")?;
    let (mut model, expected_params) = match kind {
        "flow" => {
            let dimension_text = cursor.expect("dimension")?;
            let dimension = parse_usize(&cursor, dimension_text)?;
            let layers_text = cursor.expect("layers")?;
            let layer_count = parse_usize(&cursor, layers_text)?;
            let mut layers = Vec::with_capacity(layer_count);
            for _ in 0..layer_count {
                let spec = cursor.expect("coupling")?;
                let mut tokens = spec.split_whitespace();
                let mask_text = tokens.next().ok_or_else(|| cursor.err("missing mask"))?;
                let clamp: f64 = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| cursor.err("missing clamp"))?;
                let mask: Vec<bool> = mask_text
                    .chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        other => Err(cursor.err(format!("bad mask character {other:?}"))),
                    })
                    .collect::<Result<_>>()?;
                let scale_net = read_mlp(&mut cursor)?;
                let translate_net = read_mlp(&mut cursor)?;
                layers.push(CouplingLayer::from_parts(mask, scale_net, translate_net, clamp)?);
            }
            let flow = FlowModel::from_layers(dimension, layers)?;
            let count = flow.param_count();
            (ModelContainer::Flow(flow), count)
        }
        "autoencoder" => {
            let score = match cursor.expect("score")? {
                "mae" => ScoreKind::Mae,
                "mse" => ScoreKind::Mse,
                other => return Err(cursor.err(format!("unknown score kind {other:?}"))),
            };
            let encoder = read_mlp(&mut cursor)?;
            let decoder = read_mlp(&mut cursor)?;
            let model = Autoencoder::from_parts(encoder, decoder)?;
            let count = model.param_count();
            (ModelContainer::Autoencoder { model, score }, count)
        }
        "classifier" => {
            let net = read_mlp(&mut cursor)?;
            let count = net.param_count();
            (ModelContainer::Classifier(Classifier::from_net(net)?), count)
        }
        "pca" => {
            let input_text = cursor.expect("input_dim")?;
            let input_dim = parse_usize(&cursor, input_text)?;
            let output_text = cursor.expect("output_dim")?;
            let output_dim = parse_usize(&cursor, output_text)?;
            let count = input_dim + output_dim * input_dim;
            // Assembled below once the payload is read.
            (
                ModelContainer::Pca(PcaReducer::from_parts(
                    vec![0.0; input_dim],
                    identity_components(output_dim, input_dim),
                    output_dim,
                )?),
                count,
            )
        }
        other => return Err(cursor.err(format!("unknown model kind {other:?}"))),
    };

    let declared_text = cursor.expect("params")?;
    let declared = parse_usize(&cursor, declared_text)?;
    if declared != expected_params {
        return Err(cursor.err(format!(
            "parameter count {declared} does not match the architecture ({expected_params})"
        )));
    }
    if payload.len() != declared * 8 {
        return Err(Error::Format {
            path: source.into(),
            message: format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                declared * 8
            ),
        });
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format {
            path: source.into(),
            message: "payload contains non-finite parameters".into(),
        });
    }

    match &mut model {
        ModelContainer::Flow(flow) => flow.set_params(&params),
        ModelContainer::Autoencoder { model, .. } => model.set_params(&params),
        ModelContainer::Classifier(clf) => {
            let mut net = clf.net().clone();
            net.set_params(&params);
            *clf = Classifier::from_net(net)?;
        }
        ModelContainer::Pca(pca) => {
            let input_dim = pca.input_dim();
            let output_dim = pca.output_dim();
            let mean = params[..input_dim].to_vec();
            let components = params[input_dim..].to_vec();
            *pca = PcaReducer::from_parts(mean, components, output_dim)?;
        }
    }
    Ok(model)
}

/// Rows of a k x d matrix whose rows are the first k standard basis
/// vectors; placeholder components that satisfy orthonormality until the
/// payload overwrites them.
fn identity_components(k: usize, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * d];
    for i in 0..k.min(d) {
        m[i * d + i] = 1.0;
    }
    m
}

pub fn save_model(model: &ModelContainer, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelContainer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, MaskScheme};
    use crate::nn::Mlp;
    use crate::reduce::{pca_fit, AeConfig};
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn sample_flow(seed: u64) -> FlowModel {
        let cfg = FlowConfig {
            dimension: 4,
            coupling_layers: 3,
            hidden_width: 8,
            scale_clamp: 4.0,
            mask_scheme: MaskScheme::Alternating,
            enforce_coverage: true,
        };
        FlowModel::new(&cfg, &mut seeded_rng(seed)).unwrap()
    }

    #[test]
    fn flow_round_trip_is_bit_exact() {
        let model = ModelContainer::Flow(sample_flow(3));
        let bytes = to_bytes(&model);
        let back = from_bytes(&bytes, "test").unwrap();
        assert_eq!(model, back);
        assert_eq!(bytes, to_bytes(&back));
    }

    #[test]
    fn autoencoder_round_trip_keeps_score_kind() {
        let mut rng = seeded_rng(5);
        let ae = Autoencoder::new(&AeConfig::new(6, 2), &mut rng).unwrap();
        for score in [ScoreKind::Mae, ScoreKind::Mse] {
            let model = ModelContainer::Autoencoder { model: ae.clone(), score };
            let back = from_bytes(&to_bytes(&model), "test").unwrap();
            assert_eq!(model, back);
        }
    }

    #[test]
    fn classifier_round_trip() {
        let mut rng = seeded_rng(7);
        let clf = Classifier::new(5, &mut rng).unwrap();
        let model = ModelContainer::Classifier(clf);
        let back = from_bytes(&to_bytes(&model), "test").unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn pca_round_trip_checks_orthonormality() {
        let mut rng = seeded_rng(9);
        let samples: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let pca = pca_fit(&samples, 3).unwrap();
        let model = ModelContainer::Pca(pca);
        let bytes = to_bytes(&model);
        let back = from_bytes(&bytes, "test").unwrap();
        assert_eq!(model, back);

        // Corrupt a component entry: orthonormality must fail on load.
        let mut broken = bytes.clone();
        let len = broken.len();
        broken[len - 4] ^= 0x41;
        assert!(from_bytes(&broken, "test").is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let model = ModelContainer::Flow(sample_flow(11));
        let mut bytes = to_bytes(&model);
        bytes.truncate(bytes.len() - 8);
        match from_bytes(&bytes, "test") {
            Err(Error::Format { message, .. }) => assert!(message.contains("payload")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        assert!(from_bytes(b"other-format 1\ndata\n", "test").is_err());
        let model = ModelContainer::Flow(sample_flow(13));
        let bytes = to_bytes(&model);
        let text = String::from_utf8_lossy(&bytes[..20]).to_string();
        assert!(text.starts_with("floe-model 1"));
        let bumped: Vec<u8> = b"floe-model 99"
            .iter()
            .chain(&bytes[13..])
            .copied()
            .collect();
        assert!(from_bytes(&bumped, "test").is_err());
    }

    #[test]
    fn detector_and_reducer_views() {
        let flow = ModelContainer::Flow(sample_flow(17));
        assert!(flow.clone().into_detector().is_ok());
        assert!(flow.into_reducer().is_err());

        let mut rng = seeded_rng(19);
        let ae = Autoencoder::new(&AeConfig::new(6, 2), &mut rng).unwrap();
        let container = ModelContainer::Autoencoder {
            model: ae,
            score: ScoreKind::Mse,
        };
        assert!(container.clone().into_detector().is_ok());
        assert!(container.into_reducer().is_ok());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.floe");
        let model = ModelContainer::Flow(sample_flow(23));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model, back);
    }

    /// Loading maps parameters back into the exact layer slots: a probe
    /// network evaluates identically after a round trip.
    #[test]
    fn parameters_land_in_the_right_slots() {
        let mut rng = seeded_rng(29);
        let net = Mlp::new(
            &[3, 7, 1],
            &[Activation::LeakyReLU(0.01), Activation::Sigmoid],
            &mut rng,
        )
        .unwrap();
        let clf = Classifier::from_net(net).unwrap();
        let x = [0.3, -0.9, 1.7];
        let score = clf.score(&x).unwrap();
        let back = from_bytes(&to_bytes(&ModelContainer::Classifier(clf)), "test").unwrap();
        match back {
            ModelContainer::Classifier(c) => assert_eq!(c.score(&x).unwrap(), score),
            _ => panic!("expected classifier"),
        }
    }
}
