//! Built-in model shapes for quick runs and benchmarks.

use packmpc::nn::{LayerSpec, Model, ModelManifest, Shape};
use packmpc::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: [&str; 2] = ["tiny", "lenet4"];

pub fn manifest(name: &str, ell: u32) -> Result<ModelManifest> {
    let (input, layers) = match name {
        // 8x8 image, one conv, relu, pool, dense
        "tiny" => (
            Shape::Image { h: 8, w: 8, c: 1 },
            vec![
                LayerSpec::Conv { f_w: 3, f_h: 3, c_i: 1, c_o: 4, stride: 2, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::Fc { inputs: 16, outputs: 10 },
            ],
        ),
        // LeNet with channel and dense widths divided by four
        "lenet4" => (
            Shape::Image { h: 28, w: 28, c: 1 },
            vec![
                LayerSpec::Conv { f_w: 5, f_h: 5, c_i: 1, c_o: 5, stride: 1, padding: 0 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::Conv { f_w: 5, f_h: 5, c_i: 5, c_o: 12, stride: 1, padding: 0 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::Fc { inputs: 192, outputs: 125 },
                LayerSpec::Relu,
                LayerSpec::Fc { inputs: 125, outputs: 10 },
            ],
        ),
        other => return Err(Error::InvalidConfig(format!("unknown preset `{other}` (have {})", NAMES.join(", ")))),
    };
    Ok(ModelManifest { ell, ell_x: 13, input, layers, weights: None })
}

/// Random weights of the usual fan-in scale with small biases.
pub fn model(name: &str, ell: u32, seed: u64) -> Result<Model> {
    Model::random(manifest(name, ell)?, 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A random input in `[0, 1)` of the model's input size.
pub fn input(model: &Model, seed: u64) -> Vec<f64> {
    let len = model.manifest.input.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()
}
