//! GPU memory accounting for one training configuration, in bits.
//!
//! Three terms are charged against the device: feature maps (input plus every
//! feature-layer output, scaled by the mini-batch), convolution parameters
//! with their gradients, and the fully-connected classifier. What remains is
//! the budget available to convolution algorithm workspace.
//!
//! All arithmetic is exact integer arithmetic; any intermediate that does not
//! fit in 128 bits is reported as [`MemoryError::Overflow`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{propagate_shapes, ClassifierLayerSpec, NetworkSpec, ShapeError, TensorShape};

/// Bits of storage per scalar (single precision).
pub const BITS_PER_VALUE: u128 = 32;

/// Parameters are stored once plus two gradient copies (per-instance and
/// aggregated).
pub const GRADIENT_REPLICATION: u128 = 3;

/// Unsigned bit count.
pub type Bits = u128;
/// Signed bit count; a negative budget means the configuration is infeasible.
pub type SignedBits = i128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("memory term `{0}` overflows 128-bit arithmetic")]
    Overflow(&'static str),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("mini-batch size must be at least 1")]
    ZeroBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub batch_size: u64,
    pub feature_maps: Bits,
    pub model_params: Bits,
    pub classifier: Bits,
    pub gpu_total: Bits,
    pub bound: SignedBits,
}

impl MemoryBreakdown {
    pub fn charged(&self) -> Bits {
        self.feature_maps + self.model_params + self.classifier
    }

    pub fn is_feasible(&self) -> bool {
        self.bound >= 0
    }
}

struct Acc(&'static str, u128);

impl Acc {
    fn new(term: &'static str) -> Self {
        Acc(term, 0)
    }

    fn product(&self, factors: &[u128]) -> Result<u128, MemoryError> {
        factors
            .iter()
            .try_fold(1u128, |acc, &f| acc.checked_mul(f))
            .ok_or(MemoryError::Overflow(self.0))
    }

    fn add(&mut self, factors: &[u128]) -> Result<(), MemoryError> {
        let term = self.product(factors)?;
        self.1 = self.1.checked_add(term).ok_or(MemoryError::Overflow(self.0))?;
        Ok(())
    }
}

/// Input data plus every feature-layer output for `batch_size` samples.
pub fn feature_map_memory(shapes: &[TensorShape], batch_size: u64) -> Result<Bits, MemoryError> {
    if batch_size == 0 {
        return Err(MemoryError::ZeroBatch);
    }
    let mut acc = Acc::new("feature_maps");
    for s in shapes {
        acc.add(&[
            s.width as u128,
            s.height as u128,
            s.depth as u128,
            batch_size as u128,
            BITS_PER_VALUE,
        ])?;
    }
    Ok(acc.1)
}

/// Convolution weights and biases with their gradients. The depth factor of
/// each layer is the depth of that layer's input; pooling layers contribute
/// nothing because they have no filters.
pub fn model_param_memory(network: &NetworkSpec) -> Result<Bits, MemoryError> {
    let shapes = propagate_shapes(network)?;
    model_param_memory_with_shapes(network, &shapes)
}

fn model_param_memory_with_shapes(
    network: &NetworkSpec,
    shapes: &[TensorShape],
) -> Result<Bits, MemoryError> {
    let mut acc = Acc::new("model_params");
    for (layer, input) in network.feature_layers.iter().zip(shapes) {
        let f = layer.filter_size as u128;
        let k = layer.filter_count as u128;
        // weights
        acc.add(&[f, f, input.depth as u128, k, GRADIENT_REPLICATION, BITS_PER_VALUE])?;
        // biases
        acc.add(&[k, GRADIENT_REPLICATION, BITS_PER_VALUE])?;
    }
    Ok(acc.1)
}

/// Fully-connected outputs, weights and biases.
///
/// The bias term is `(m - 1) * 3 * 32` regardless of neuron counts, and the
/// output term does not scale with the mini-batch. Both follow the reference
/// formula literally and are surfaced as a caveat in planner reports.
pub fn classifier_memory(layers: &[ClassifierLayerSpec]) -> Result<Bits, MemoryError> {
    let mut acc = Acc::new("classifier");
    for layer in layers {
        acc.add(&[layer.neuron_count as u128, BITS_PER_VALUE])?;
    }
    for pair in layers.windows(2) {
        acc.add(&[
            pair[0].neuron_count as u128,
            pair[1].neuron_count as u128,
            GRADIENT_REPLICATION,
            BITS_PER_VALUE,
        ])?;
    }
    let links = layers.len().saturating_sub(1) as u128;
    acc.add(&[links, GRADIENT_REPLICATION, BITS_PER_VALUE])?;
    Ok(acc.1)
}

/// Compose the three terms and the remaining budget for one mini-batch size.
pub fn memory_bound(
    gpu_memory: Bits,
    network: &NetworkSpec,
    batch_size: u64,
) -> Result<MemoryBreakdown, MemoryError> {
    let shapes = propagate_shapes(network)?;
    memory_bound_with_shapes(gpu_memory, network, &shapes, batch_size)
}

/// Same as [`memory_bound`] with shapes already propagated.
pub fn memory_bound_with_shapes(
    gpu_memory: Bits,
    network: &NetworkSpec,
    shapes: &[TensorShape],
    batch_size: u64,
) -> Result<MemoryBreakdown, MemoryError> {
    let feature_maps = feature_map_memory(shapes, batch_size)?;
    let model_params = model_param_memory_with_shapes(network, shapes)?;
    let classifier = classifier_memory(&network.classifier_layers)?;

    let signed = |v: u128, term| SignedBits::try_from(v).map_err(|_| MemoryError::Overflow(term));
    let charged = [
        signed(feature_maps, "feature_maps")?,
        signed(model_params, "model_params")?,
        signed(classifier, "classifier")?,
    ];
    let bound = charged
        .iter()
        .try_fold(signed(gpu_memory, "gpu_total")?, |b, &term| b.checked_sub(term))
        .ok_or(MemoryError::Overflow("bound"))?;

    Ok(MemoryBreakdown {
        batch_size,
        feature_maps,
        model_params,
        classifier,
        gpu_total: gpu_memory,
        bound,
    })
}

/// Bytes needed to ship one copy of every trainable parameter (no gradient
/// copies), derived from the same terms as the memory model.
pub fn parameter_bytes(network: &NetworkSpec) -> Result<u128, MemoryError> {
    let conv = model_param_memory(network)? / GRADIENT_REPLICATION;
    let layers = &network.classifier_layers;
    let mut acc = Acc::new("parameter_bytes");
    for pair in layers.windows(2) {
        acc.add(&[pair[0].neuron_count as u128, pair[1].neuron_count as u128, BITS_PER_VALUE])?;
    }
    acc.add(&[layers.len().saturating_sub(1) as u128, BITS_PER_VALUE])?;
    let bits = conv.checked_add(acc.1).ok_or(MemoryError::Overflow("parameter_bytes"))?;
    Ok(bits / 8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{alexnet, FeatureLayerSpec};

    fn toy() -> NetworkSpec {
        NetworkSpec::new(
            TensorShape::new(4, 4, 1),
            vec![FeatureLayerSpec::conv(3, 1, 1, 2)],
            vec![
                ClassifierLayerSpec { neuron_count: 8 },
                ClassifierLayerSpec { neuron_count: 4 },
            ],
        )
    }

    #[test]
    fn toy_terms() {
        let net = toy();
        let shapes = propagate_shapes(&net).unwrap();
        assert_eq!(shapes[1], TensorShape::new(4, 4, 2));
        assert_eq!(feature_map_memory(&shapes, 2).unwrap(), 3072);
        assert_eq!(model_param_memory(&net).unwrap(), 1920);
        assert_eq!(classifier_memory(&net.classifier_layers).unwrap(), 3552);
    }

    #[test]
    fn single_fc_layer_has_only_outputs() {
        let layers = [ClassifierLayerSpec { neuron_count: 10 }];
        assert_eq!(classifier_memory(&layers).unwrap(), 320);
    }

    #[test]
    fn pooling_only_has_no_params() {
        let net = NetworkSpec::new(
            TensorShape::new(8, 8, 3),
            vec![FeatureLayerSpec::pool(2, 2, 0), FeatureLayerSpec::pool(2, 2, 0)],
            vec![ClassifierLayerSpec { neuron_count: 4 }],
        );
        assert_eq!(model_param_memory(&net).unwrap(), 0);
    }

    #[test]
    fn bound_for_12gib_toy() {
        let gpu = 12u128 * (1 << 30) * 8;
        let b = memory_bound(gpu, &toy(), 2).unwrap();
        assert_eq!(b.bound, gpu as i128 - (3072 + 1920 + 3552));
        assert_eq!(b.charged(), 8544);
    }

    #[test]
    fn bound_exact_cancellation_and_negative() {
        let b = memory_bound(8544, &toy(), 2).unwrap();
        assert_eq!(b.bound, 0);
        assert!(b.is_feasible());
        let b = memory_bound(1000, &toy(), 2).unwrap();
        assert_eq!(b.bound, 1000 - 8544);
        assert!(!b.is_feasible());
    }

    #[test]
    fn alexnet_terms() {
        // Independently summed over the nine AlexNet activation volumes and
        // the five convolution layers.
        let net = alexnet();
        let shapes = propagate_shapes(&net).unwrap();
        assert_eq!(feature_map_memory(&shapes, 128).unwrap(), 3_780_902_912);
        assert_eq!(model_param_memory(&net).unwrap(), 359_731_200);
        assert_eq!(classifier_memory(&net.classifier_layers).unwrap(), 5_628_296_736);
        let three = [9216, 4096, 1000].map(|neuron_count| ClassifierLayerSpec { neuron_count });
        assert_eq!(classifier_memory(&three).unwrap(), 4_017_552_832);
    }

    #[test]
    fn overflow_is_reported() {
        let huge = [ClassifierLayerSpec { neuron_count: u64::MAX }; 2];
        assert_eq!(classifier_memory(&huge), Err(MemoryError::Overflow("classifier")));
        let shapes = [TensorShape::new(u64::MAX, u64::MAX, u64::MAX)];
        assert!(matches!(feature_map_memory(&shapes, 2), Err(MemoryError::Overflow(_))));
    }

    #[test]
    fn zero_batch_rejected() {
        assert_eq!(feature_map_memory(&[], 0), Err(MemoryError::ZeroBatch));
    }

    #[test]
    fn parameter_bytes_toy() {
        // conv: 18 weights + 2 biases; fc: 32 weights + 1 bias term
        assert_eq!(parameter_bytes(&toy()).unwrap(), (20 + 33) * 4);
    }
}
