//! Level-0 bridge between pixel space and memory space.
//!
//! The encoder maps a flattened 28x28 image into the d-dimensional memory
//! space; the decoder maps back, ending in a sigmoid so every output pixel
//! lies in (0, 1). Both are three weight matrices (two hidden layers).

use crate::error::{Error, Result};
use crate::nn::{squared_error_sum, Activation, Mlp};
use crate::rng::Rng;
use crate::sweeper::MemoryVector;

/// Flattened 28x28 grayscale image.
pub const IMAGE_DIM: usize = 784;

/// A flattened image: 784 pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector(Vec<f32>);

impl ImageVector {
    pub fn new(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != IMAGE_DIM {
            return Err(Error::ShapeMismatch {
                context: "image pixel count",
                expected: IMAGE_DIM,
                actual: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "pixel {bad} out of range [0,1]: {}",
                pixels[bad]
            )));
        }
        Ok(Self(pixels))
    }

    /// The all-zero (black) image.
    pub fn zeros() -> Self {
        Self(vec![0.0; IMAGE_DIM])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Image encoder/decoder pair sharing the memory dimension d.
#[derive(Debug, Clone)]
pub struct Codec {
    encoder: Mlp,
    decoder: Mlp,
}

impl Codec {
    /// Encoder `[784 -> hidden -> hidden -> d]` with ReLU hidden layers and a
    /// linear output; decoder mirrors it and ends in a sigmoid.
    pub fn new(memory_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let encoder = Mlp::new(
            &[IMAGE_DIM, hidden, hidden, memory_dim],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            rng,
        )
        .expect("valid encoder dims");
        let decoder = Mlp::new(
            &[memory_dim, hidden, hidden, IMAGE_DIM],
            &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            rng,
        )
        .expect("valid decoder dims");
        Self { encoder, decoder }
    }

    pub fn memory_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.layer(0).out_dim()
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    pub fn encode(&self, image: &ImageVector) -> Result<MemoryVector> {
        Ok(MemoryVector::new(self.encoder.infer(image.as_slice())?))
    }

    pub fn decode(&self, latent: &MemoryVector) -> Result<ImageVector> {
        if latent.dim() != self.memory_dim() {
            return Err(Error::ShapeMismatch {
                context: "decode latent",
                expected: self.memory_dim(),
                actual: latent.dim(),
            });
        }
        let pixels = self.decoder.infer(latent.as_slice())?;
        ImageVector::new(pixels)
    }
}

/// Level-0 reconstruction loss in pixel space:
/// `||D(ztL) - xL||^2 + ||D(ztR) - xR||^2`, summed over pixels.
pub fn pixel_recon_loss(
    codec: &Codec,
    recon_left: &MemoryVector,
    recon_right: &MemoryVector,
    x_left: &ImageVector,
    x_right: &ImageVector,
) -> Result<f64> {
    let dl = codec.decode(recon_left)?;
    let dr = codec.decode(recon_right)?;
    Ok(squared_error_sum(dl.as_slice(), x_left.as_slice())
        + squared_error_sum(dr.as_slice(), x_right.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(rng: &mut Rng) -> ImageVector {
        ImageVector::new((0..IMAGE_DIM).map(|_| rng.next_f32()).collect()).unwrap()
    }

    #[test]
    fn image_vector_validates_length_and_range() {
        assert!(ImageVector::new(vec![0.0; 100]).is_err());
        let mut bad = vec![0.5; IMAGE_DIM];
        bad[20] = 1.5;
        assert!(ImageVector::new(bad).is_err());
        assert!(ImageVector::new(vec![1.0; IMAGE_DIM]).is_ok());
    }

    #[test]
    fn zero_weight_encoder_gives_zero_latent() {
        let mut rng = Rng::new(1);
        let mut codec = Codec::new(8, 16, &mut rng);
        for k in 0..codec.encoder.layer_count() {
            codec.encoder_mut().layer_mut(k).weight_mut().fill(0.0);
            codec.encoder_mut().layer_mut(k).bias_mut().fill(0.0);
        }
        let z = codec.encode(&random_image(&mut rng)).unwrap();
        assert_eq!(z.as_slice(), &[0.0; 8]);
    }

    #[test]
    fn encode_is_deterministic_and_matches_reference() {
        let mut rng = Rng::new(2);
        let codec = Codec::new(6, 12, &mut rng);
        let img = random_image(&mut rng);
        let a = codec.encode(&img).unwrap();
        let b = codec.encode(&img).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let reference = codec.encoder().infer(img.as_slice()).unwrap();
        assert_eq!(a.as_slice(), &reference[..]);
    }

    #[test]
    fn zero_weight_decoder_gives_half_pixels() {
        let mut rng = Rng::new(3);
        let mut codec = Codec::new(4, 8, &mut rng);
        for k in 0..codec.decoder.layer_count() {
            codec.decoder_mut().layer_mut(k).weight_mut().fill(0.0);
            codec.decoder_mut().layer_mut(k).bias_mut().fill(0.0);
        }
        let img = codec.decode(&MemoryVector::new(vec![0.3, -0.7, 2.0, 0.0])).unwrap();
        assert!(img.as_slice().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn decoder_outputs_stay_inside_open_unit_interval() {
        let mut rng = Rng::new(4);
        let codec = Codec::new(8, 16, &mut rng);
        for _ in 0..1000 {
            let z = MemoryVector::new((0..8).map(|_| (rng.uniform_symmetric() * 3.0) as f32).collect());
            let img = codec.decode(&z).unwrap();
            assert!(img.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn decode_rejects_wrong_latent_dim() {
        let mut rng = Rng::new(5);
        let codec = Codec::new(8, 16, &mut rng);
        assert!(codec.decode(&MemoryVector::zeros(5)).is_err());
    }

    #[test]
    fn pixel_recon_loss_zero_when_decoder_matches_targets() {
        // Zero-weight decoder outputs all 0.5; targets of all 0.5 give zero loss.
        let mut rng = Rng::new(6);
        let mut codec = Codec::new(4, 8, &mut rng);
        for k in 0..codec.decoder.layer_count() {
            codec.decoder_mut().layer_mut(k).weight_mut().fill(0.0);
            codec.decoder_mut().layer_mut(k).bias_mut().fill(0.0);
        }
        let half = ImageVector::new(vec![0.5; IMAGE_DIM]).unwrap();
        let z = MemoryVector::zeros(4);
        let loss = pixel_recon_loss(&codec, &z, &z, &half, &half).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn pixel_recon_loss_matches_two_separate_sums() {
        let mut rng = Rng::new(7);
        let codec = Codec::new(4, 8, &mut rng);
        let zl = MemoryVector::new((0..4).map(|_| rng.uniform_symmetric() as f32).collect());
        let zr = MemoryVector::new((0..4).map(|_| rng.uniform_symmetric() as f32).collect());
        let xl = random_image(&mut rng);
        let xr = random_image(&mut rng);
        let loss = pixel_recon_loss(&codec, &zl, &zr, &xl, &xr).unwrap();
        let dl = codec.decode(&zl).unwrap();
        let dr = codec.decode(&zr).unwrap();
        let mut reference = 0.0f64;
        for (a, b) in dl.as_slice().iter().zip(xl.as_slice()) {
            reference += (*a as f64 - *b as f64) * (*a as f64 - *b as f64);
        }
        for (a, b) in dr.as_slice().iter().zip(xr.as_slice()) {
            reference += (*a as f64 - *b as f64) * (*a as f64 - *b as f64);
        }
        assert!((loss - reference).abs() <= 1e-9 * reference.max(1.0));
    }
}
