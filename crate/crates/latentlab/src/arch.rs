//! Ready-made architectures for the bundled experiments.

use crate::error::Result;
use crate::layer::LayerSpec;
use crate::network::Network;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Decoder for 28x28 grayscale images: latent -> dense to 128 x 7 x 7 ->
/// two stride-2 transposed convolutions -> 1 x 28 x 28 logits. Train it
/// with the fused-logit BCE; apply a sigmoid for actual reconstructions.
pub fn image_decoder_spec(latent_dim: usize) -> (Vec<usize>, Vec<LayerSpec>) {
    scaled_image_decoder_spec(latent_dim, 128)
}

/// Mirror-image encoder: two stride-2 convolutions then a dense layer down
/// to the latent dimension.
pub fn image_encoder_spec(latent_dim: usize) -> (Vec<usize>, Vec<LayerSpec>) {
    scaled_image_encoder_spec(latent_dim, 128)
}

/// [`image_decoder_spec`] with a configurable channel budget; `base` is the
/// channel count of the innermost feature map (`base/2` for the outer one).
pub fn scaled_image_decoder_spec(latent_dim: usize, base: usize) -> (Vec<usize>, Vec<LayerSpec>) {
    let half = (base / 2).max(1);
    let specs = vec![
        LayerSpec::Dense { in_features: latent_dim, out_features: base * 7 * 7, bias: true },
        LayerSpec::Relu,
        LayerSpec::Reshape { shape: vec![base, 7, 7] },
        LayerSpec::ConvTranspose2d { in_channels: base, out_channels: half, kernel: 4, stride: 2, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::ConvTranspose2d { in_channels: half, out_channels: 1, kernel: 4, stride: 2, padding: 1 },
    ];
    (vec![latent_dim], specs)
}

pub fn scaled_image_encoder_spec(latent_dim: usize, base: usize) -> (Vec<usize>, Vec<LayerSpec>) {
    let half = (base / 2).max(1);
    let specs = vec![
        LayerSpec::Conv2d { in_channels: 1, out_channels: half, kernel: 4, stride: 2, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_channels: half, out_channels: base, kernel: 4, stride: 2, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Reshape { shape: vec![base * 7 * 7] },
        LayerSpec::Dense { in_features: base * 7 * 7, out_features: latent_dim, bias: true },
    ];
    (vec![1, 28, 28], specs)
}

/// Sparse single-layer decoder for the regulatory simulation: a masked
/// dense layer gated by the generating adjacency, followed by a ReLU.
/// `adjacency` is `[n, m]`, mapping m regulators to n outputs.
pub fn sim_decoder(adjacency: &Tensor, rng: &mut Rng) -> Result<Network> {
    let (n, m) = adjacency.dims2()?;
    Network::new(
        &[m],
        vec![
            LayerSpec::MaskedDense { in_features: m, out_features: n, mask: adjacency.clone() },
            LayerSpec::Relu,
        ],
        rng,
    )
}

/// Single dense encoder for the regulatory simulation with the slope-0.01
/// leaky rectifier.
pub fn sim_encoder(n: usize, m: usize, rng: &mut Rng) -> Result<Network> {
    Network::new(
        &[n],
        vec![
            LayerSpec::Dense { in_features: n, out_features: m, bias: true },
            LayerSpec::LeakyRelu { slope: 0.01 },
        ],
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_decoder_parameter_count() {
        // dense 20 -> 6272 (+6272), convT 128 -> 64 k4 (+64), convT 64 -> 1 k4 (+1).
        let (input, specs) = image_decoder_spec(20);
        let net = Network::new(&input, specs, &mut Rng::new(0)).unwrap();
        assert_eq!(net.param_count(), 263_873);
        assert_eq!(net.output_shape(), &[1, 28, 28]);
    }

    #[test]
    fn image_encoder_parameter_count() {
        // conv 1 -> 64 (+64), conv 64 -> 128 (+128), dense 6272 -> 20 (+20).
        let (input, specs) = image_encoder_spec(20);
        let net = Network::new(&input, specs, &mut Rng::new(0)).unwrap();
        assert_eq!(net.param_count(), 257_748);
        assert_eq!(net.output_shape(), &[20]);
    }

    #[test]
    fn sim_decoder_parameter_count_tracks_connectivity() {
        let mut rng = Rng::new(1);
        let cfg = crate::data::SimConfig::default();
        let (train, _) = crate::data::simulate(&cfg).unwrap();
        let nnz = train.adjacency.data().iter().filter(|&&v| v != 0.0).count();
        let dec = sim_decoder(&train.adjacency, &mut rng).unwrap();
        assert_eq!(dec.param_count(), nnz + 1000);
        // close to the nominal 11k for 10% of 1000 x 100
        assert!((dec.param_count() as i64 - 11_000).unsigned_abs() < 600);
    }

    #[test]
    fn masked_dense_example_count() {
        // An exactly-10%-dense 100 -> 1000 mask: 10_000 + 1_000 = 11_000.
        let mut mask = Tensor::zeros(&[1000, 100]);
        for i in 0..1000 {
            for j in 0..10 {
                mask.set(&[i, (i + j * 10) % 100], 1.0);
            }
        }
        let spec = LayerSpec::MaskedDense { in_features: 100, out_features: 1000, mask };
        assert_eq!(spec.param_count(), 11_000);
    }
}
