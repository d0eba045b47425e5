//! Linear CNN description and spatial shape propagation.
//!
//! A network is an input shape, a chain of convolution/pooling layers (the
//! feature-extraction part) and a chain of fully-connected layers (the
//! classifier). Spatial sizes follow the usual output-size relation with
//! floor division:
//!
//! ```text
//! out = floor((in - filter + 2 * padding) / stride) + 1
//! ```
//!
//! Width and height are propagated independently so non-square inputs work.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width x height x depth of an activation volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub width: u64,
    pub height: u64,
    pub depth: u64,
}

impl TensorShape {
    pub const fn new(width: u64, height: u64, depth: u64) -> Self {
        Self {
            width,
            height,
            depth,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.width >= 1 && self.height >= 1 && self.depth >= 1
    }

    /// Number of scalars in one sample of this volume.
    pub fn volume(&self) -> Option<u128> {
        (self.width as u128)
            .checked_mul(self.height as u128)?
            .checked_mul(self.depth as u128)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Convolution,
    Pooling,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Convolution => f.write_str("conv"),
            LayerKind::Pooling => f.write_str("pool"),
        }
    }
}

/// One convolution or pooling layer. Pooling layers carry `filter_count == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLayerSpec {
    pub kind: LayerKind,
    pub filter_size: u64,
    pub stride: u64,
    pub padding: u64,
    pub filter_count: u64,
}

impl FeatureLayerSpec {
    pub const fn conv(filter_size: u64, stride: u64, padding: u64, filter_count: u64) -> Self {
        Self {
            kind: LayerKind::Convolution,
            filter_size,
            stride,
            padding,
            filter_count,
        }
    }

    pub const fn pool(filter_size: u64, stride: u64, padding: u64) -> Self {
        Self {
            kind: LayerKind::Pooling,
            filter_size,
            stride,
            padding,
            filter_count: 0,
        }
    }

    pub fn is_convolution(&self) -> bool {
        self.kind == LayerKind::Convolution
    }

    /// Output shape for `input`, or `None` when the filter does not fit the
    /// padded input (or the stride is zero).
    pub fn output_shape(&self, input: TensorShape) -> Option<TensorShape> {
        let width = output_extent(input.width, self.filter_size, self.padding, self.stride)?;
        let height = output_extent(input.height, self.filter_size, self.padding, self.stride)?;
        let depth = match self.kind {
            LayerKind::Convolution => self.filter_count,
            LayerKind::Pooling => input.depth,
        };
        Some(TensorShape::new(width, height, depth))
    }
}

fn output_extent(input: u64, filter: u64, padding: u64, stride: u64) -> Option<u64> {
    if stride == 0 {
        return None;
    }
    let padded = (input as u128).checked_add(2 * padding as u128)?;
    let span = padded.checked_sub(filter as u128)?;
    u64::try_from(span / stride as u128 + 1).ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassifierLayerSpec {
    pub neuron_count: u64,
}

/// Input shape plus the feature and classifier chains. Layer ids are
/// 1-based positions within their chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: TensorShape,
    pub feature_layers: Vec<FeatureLayerSpec>,
    pub classifier_layers: Vec<ClassifierLayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("layer {layer_id}: output shape is not positive ({input} with filter {filter_size}, stride {stride}, padding {padding})")]
    NonPositiveShape {
        layer_id: usize,
        input: TensorShape,
        filter_size: u64,
        stride: u64,
        padding: u64,
    },
    #[error("layer {layer_id}: {message}")]
    InvalidLayer { layer_id: usize, message: String },
    #[error("invalid input shape {0}")]
    InvalidInput(TensorShape),
}

/// Which chain a violation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Input,
    Feature,
    Classifier,
    Network,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub part: Part,
    /// 1-based id within `part`; `None` for whole-network issues.
    pub layer_id: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.part, self.layer_id) {
            (Part::Feature, Some(id)) => write!(f, "feature layer {id}: {}", self.message),
            (Part::Classifier, Some(id)) => write!(f, "fc layer {id}: {}", self.message),
            (Part::Input, _) => write!(f, "input: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl NetworkSpec {
    pub fn new(
        input_shape: TensorShape,
        feature_layers: Vec<FeatureLayerSpec>,
        classifier_layers: Vec<ClassifierLayerSpec>,
    ) -> Self {
        Self {
            input_shape,
            feature_layers,
            classifier_layers,
        }
    }

    /// Number of convolution layers, i.e. the layers an algorithm catalog
    /// has to cover.
    pub fn conv_layer_count(&self) -> usize {
        self.feature_layers.iter().filter(|l| l.is_convolution()).count()
    }

    /// Feature-layer ids (1-based) of the convolution layers, in order. The
    /// k-th element is the feature layer backing catalog layer k.
    pub fn conv_layer_positions(&self) -> Vec<usize> {
        self.feature_layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_convolution())
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Every invariant breach in the network. An empty report means the
    /// network is valid and [`propagate_shapes`] will succeed.
    pub fn validate(&self) -> Vec<Violation> {
        validate_network(self)
    }
}

pub fn validate_network(network: &NetworkSpec) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |part, layer_id, message: String| {
        report.push(Violation {
            part,
            layer_id,
            message,
        })
    };

    if !network.input_shape.is_valid() {
        push(
            Part::Input,
            None,
            format!("shape {} has a zero component", network.input_shape),
        );
    }
    if network.feature_layers.is_empty() {
        push(
            Part::Network,
            None,
            "at least one convolution or pooling layer is required".into(),
        );
    }
    if network.classifier_layers.is_empty() {
        push(
            Part::Network,
            None,
            "at least one fully-connected layer is required".into(),
        );
    }

    // Keep propagating until the chain collapses; later layers have no
    // meaningful input after that.
    let mut current = network.input_shape.is_valid().then_some(network.input_shape);
    for (idx, layer) in network.feature_layers.iter().enumerate() {
        let id = Some(idx + 1);
        let mut layer_ok = true;
        match layer.kind {
            LayerKind::Pooling if layer.filter_count != 0 => {
                push(
                    Part::Feature,
                    id,
                    format!("pooling layer must have K = 0, found {}", layer.filter_count),
                );
                layer_ok = false;
            }
            LayerKind::Convolution if layer.filter_count == 0 => {
                push(
                    Part::Feature,
                    id,
                    "convolution layer needs at least one filter".into(),
                );
                layer_ok = false;
            }
            _ => {}
        }
        if layer.stride == 0 {
            push(Part::Feature, id, "stride must be at least 1".into());
            layer_ok = false;
        }
        if layer.filter_size == 0 {
            push(Part::Feature, id, "filter size must be at least 1".into());
            layer_ok = false;
        }

        current = match current {
            Some(input) if layer_ok => match layer.output_shape(input) {
                Some(out) => Some(out),
                None => {
                    push(
                        Part::Feature,
                        id,
                        format!(
                            "shape collapse: filter {} with padding {} does not fit input {}",
                            layer.filter_size, layer.padding, input
                        ),
                    );
                    None
                }
            },
            _ => None,
        };
    }

    for (idx, layer) in network.classifier_layers.iter().enumerate() {
        if layer.neuron_count == 0 {
            push(
                Part::Classifier,
                Some(idx + 1),
                "neuron count must be at least 1".into(),
            );
        }
    }
    report
}

/// Shapes of the input and every feature-layer output, `n + 1` entries with
/// the input at index 0.
pub fn propagate_shapes(network: &NetworkSpec) -> Result<Vec<TensorShape>, ShapeError> {
    if !network.input_shape.is_valid() {
        return Err(ShapeError::InvalidInput(network.input_shape));
    }
    let mut shapes = Vec::with_capacity(network.feature_layers.len() + 1);
    shapes.push(network.input_shape);
    for (idx, layer) in network.feature_layers.iter().enumerate() {
        let layer_id = idx + 1;
        if layer.stride == 0 {
            return Err(ShapeError::InvalidLayer {
                layer_id,
                message: "stride must be at least 1".into(),
            });
        }
        let input = shapes[idx];
        let out = layer
            .output_shape(input)
            .ok_or(ShapeError::NonPositiveShape {
                layer_id,
                input,
                filter_size: layer.filter_size,
                stride: layer.stride,
                padding: layer.padding,
            })?;
        if out.depth == 0 {
            return Err(ShapeError::InvalidLayer {
                layer_id,
                message: "convolution layer produces zero depth".into(),
            });
        }
        shapes.push(out);
    }
    Ok(shapes)
}

/// AlexNet as used throughout the crate's fixtures: five convolutions with
/// three max-pool layers, and a classifier whose first entry is the
/// flattened 6x6x256 feature volume.
pub fn alexnet() -> NetworkSpec {
    NetworkSpec::new(
        TensorShape::new(224, 224, 3),
        vec![
            FeatureLayerSpec::conv(11, 4, 2, 96),
            FeatureLayerSpec::pool(3, 2, 0),
            FeatureLayerSpec::conv(5, 1, 2, 256),
            FeatureLayerSpec::pool(3, 2, 0),
            FeatureLayerSpec::conv(3, 1, 1, 384),
            FeatureLayerSpec::conv(3, 1, 1, 384),
            FeatureLayerSpec::conv(3, 1, 1, 256),
            FeatureLayerSpec::pool(3, 2, 0),
        ],
        [9216, 4096, 4096, 1000]
            .into_iter()
            .map(|neuron_count| ClassifierLayerSpec { neuron_count })
            .collect(),
    )
}
