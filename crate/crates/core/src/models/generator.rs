//! Skip-style conditional generator.
//!
//! Stage table (input extent n per axis, output coordinates shrink 42 in total):
//!
//! | scale | ops                                         | extent   |
//! |-------|---------------------------------------------|----------|
//! | 1     | conv 3³ (in→c1), lrelu                      | n−2      |
//! | 2     | up×2, conv (c1→c2)+noise, conv (c2→c2)+noise | 2n−8     |
//! | 4     | up×2, conv (c2→c3)+noise, conv (c3→c3)+noise | 4n−20    |
//! | 8     | up×2, conv (c3→c4)+noise                    | 8n−42    |
//!
//! Every stage projects its features to the output channels with a 1³ conv;
//! the running output is upsampled, center-cropped and summed with it.

use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{checked_output_extents, GeneratorConfig};
use super::params::{Bound, ParamStore};

/// Noise injection mode for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Zero,
    Seeded(u64),
}

struct ConvSpec {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
    noise: bool,
}

/// Every conv of the generator in parameter order. Noise layers are
/// numbered by their position among noisy convs.
fn layer_table(c: &GeneratorConfig) -> Vec<ConvSpec> {
    let [c1, c2, c3, c4] = c.channels;
    let conv = |name: &str, cin, cout, k, noise| ConvSpec {
        name: name.to_string(),
        cin,
        cout,
        k,
        noise,
    };
    let o = c.out_channels;
    vec![
        conv("s1.conv", c.in_channels, c1, 3, false),
        conv("s1.proj", c1, o, 1, false),
        conv("s2.conv_a", c1, c2, 3, true),
        conv("s2.conv_b", c2, c2, 3, true),
        conv("s2.proj", c2, o, 1, false),
        conv("s4.conv_a", c2, c3, 3, true),
        conv("s4.conv_b", c3, c3, 3, true),
        conv("s4.proj", c3, o, 1, false),
        conv("s8.conv", c3, c4, 3, true),
        conv("s8.proj", c4, o, 1, false),
    ]
}

/// Hex SHA-256 of a config's canonical TOML form.
pub fn config_fingerprint<C: serde::Serialize>(kind: &str, config: &C) -> String {
    let text = toml::to_string(config).expect("configs serialize");
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Gaussian/√fan-in kernels, zero biases and noise scales.
pub fn build_generator<T: Scalar>(config: &GeneratorConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut store = ParamStore::new(config_fingerprint("generator", config));
    for (i, l) in layer_table(config).iter().enumerate() {
        let fan_in = (l.cin * l.k * l.k * l.k) as f64;
        let w: Tensor<T> = rng::gaussian(seed, 2 * i as u64, 0, &[l.cout, l.cin, l.k, l.k, l.k]);
        let s = T::lit(1.0 / fan_in.sqrt());
        store.insert(format!("{}.w", l.name), w.map(|x| x * s))?;
        store.insert(format!("{}.b", l.name), Tensor::zeros(&[l.cout]))?;
        if l.noise {
            store.insert(format!("{}.noise", l.name), Tensor::zeros(&[l.cout]))?;
        }
    }
    Ok(store)
}

/// Standard-normal spatial field for noise layer `layer`, one channel.
fn noise_field<T: Scalar>(seed: u64, layer: u64, spatial: [usize; 3]) -> Tensor<T> {
    rng::gaussian(seed, 0x4e00 + layer, 0, &spatial)
}

struct Ctx<'a, 'b, T> {
    tape: &'a mut Tape<T>,
    params: &'a Bound<'b, T>,
    slope: T,
    noise: Option<u64>,
    noise_layer: u64,
}

impl<T: Scalar> Ctx<'_, '_, T> {
    fn conv(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.params.var(&format!("{name}.w"))?;
        let b = self.params.var(&format!("{name}.b"))?;
        self.tape.conv3d_bias(x, w, b)
    }

    /// conv → noise → leaky relu.
    fn block(&mut self, x: Var, name: &str, noisy: bool) -> Result<Var> {
        let mut y = self.conv(x, name)?;
        if noisy {
            let layer = self.noise_layer;
            self.noise_layer += 1;
            if let Some(seed) = self.noise {
                let [c, d, h, w] = self.tape.value(y).dims4()?;
                let field: Tensor<T> = noise_field(seed, layer, [d, h, w]);
                let mut tiled = Vec::with_capacity(c * field.len());
                for _ in 0..c {
                    tiled.extend_from_slice(field.data());
                }
                let n = self.tape.constant(Tensor::new(&[c, d, h, w], tiled)?);
                let scale = self.params.var(&format!("{name}.noise"))?;
                let scaled = self.tape.mul_channel(n, scale)?;
                y = self.tape.add(y, scaled)?;
            }
        }
        self.tape.leaky_relu(y, self.slope)
    }

    /// Upsamples the running output, crops it to `skip`'s extent, adds.
    fn merge(&mut self, running: Var, skip: Var) -> Result<Var> {
        let up = self.tape.trilinear_resize(running, 2)?;
        let [_, d, h, w] = self.tape.value(skip).dims4()?;
        let up = self.tape.center_crop(up, [d, h, w])?;
        self.tape.add(up, skip)
    }
}

fn check_input(config: &GeneratorConfig, shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, d, h, w] if c == config.in_channels => config.output_extents([d, h, w]),
        s => shape_err(format!(
            "generator input must be {}×D×H×W, got {s:?}",
            config.in_channels
        )),
    }
}

/// Generator forward on a tape. `input` is `V×n_r×n_lat×n_lon`.
pub fn generator_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound<'_, T>,
    config: &GeneratorConfig,
    input: Var,
    noise: NoiseMode,
) -> Result<Var> {
    let expected = check_input(config, tape.shape(input))?;
    let noise = match noise {
        NoiseMode::Seeded(s) if config.noise_enabled => Some(s),
        _ => None,
    };
    let mut cx = Ctx {
        tape,
        params,
        slope: T::lit(config.leaky_slope),
        noise,
        noise_layer: 0,
    };

    let h1 = cx.block(input, "s1.conv", false)?;
    let mut out = cx.conv(h1, "s1.proj")?;

    let mut h = h1;
    for scale in ["s2", "s4"] {
        let up = cx.tape.trilinear_resize(h, 2)?;
        let a = cx.block(up, &format!("{scale}.conv_a"), true)?;
        h = cx.block(a, &format!("{scale}.conv_b"), true)?;
        let skip = cx.conv(h, &format!("{scale}.proj"))?;
        out = cx.merge(out, skip)?;
    }

    let up = cx.tape.trilinear_resize(h, 2)?;
    let h8 = cx.block(up, "s8.conv", true)?;
    let skip = cx.conv(h8, "s8.proj")?;
    out = cx.merge(out, skip)?;

    let [_, d, hh, w] = cx.tape.value(out).dims4()?;
    debug_assert_eq!([d, hh, w], expected);
    Ok(out)
}

/// Trilinear ×8 upsample of the conditioning window, center-cropped to the
/// generator output footprint.
pub fn upsample_condition<T: Scalar>(tape: &mut Tape<T>, input: Var) -> Result<Var> {
    let [_, d, h, w] = tape.value(input).dims4()?;
    let out = checked_output_extents([d, h, w])?;
    let up = tape.trilinear_resize(input, 8)?;
    tape.center_crop(up, out)
}

/// A generator ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let params = build_generator(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, input: &Tensor<T>, noise: NoiseMode) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = generator_forward(&mut tape, &bound, &self.config, x, noise)?;
        Ok(tape.value(y).clone())
    }
}

/// [`upsample_condition`] on plain tensors.
pub fn condition_tensor<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let x = tape.constant(input.clone());
    let y = upsample_condition(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::params::count_params;

    #[test]
    fn default_param_tally() {
        // hand tally of the stage table with widths 128/64/32/16
        let conv = |ci: usize, co: usize, k: usize| ci * co * k * k * k + co;
        let expected = conv(4, 128, 3)
            + conv(128, 4, 1)
            + conv(128, 64, 3) + 64
            + conv(64, 64, 3) + 64
            + conv(64, 4, 1)
            + conv(64, 32, 3) + 32
            + conv(32, 32, 3) + 32
            + conv(32, 4, 1)
            + conv(32, 16, 3) + 16
            + conv(16, 4, 1);
        assert_eq!(expected, 443_888);
        let g = build_generator::<f32>(&GeneratorConfig::default(), 0).unwrap();
        assert_eq!(count_params(&g), 443_888);
    }

    #[test]
    fn noise_scales_start_at_zero() {
        let g = build_generator::<f32>(&GeneratorConfig::micro(), 1).unwrap();
        for (name, t) in g.iter() {
            if name.ends_with(".noise") || name.ends_with(".b") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }
}
