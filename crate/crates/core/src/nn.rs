//! Fixed-point CNN inference on packed shares.
//!
//! Tensors are images in `[y][x][c]` order or flat vectors. Conv weights are
//! stored `[o][dy][dx][c]`, FC weights `[i][o]` with the input index in
//! flattened image order.
//!
//! On the secure side a tensor is held in one of three layouts:
//! - `Replicated`: one share per pixel, every slot a copy of it (Conv input)
//! - `ChannelSlots`: one share per position and group of `k` output
//!   channels (Conv output; padded channels are zero)
//! - `Vector`: `k` consecutive vector entries per share (FC input/output)
//!
//! Conv is lowered to a slot-wise matrix product: rows are output positions,
//! columns the window entries, slot `i` of the filter matrix holds filter
//! `g*k + i` of group `g`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Fp;
use crate::linear::{pack_trans, pmat_mult_trunc, vec_mat_mult_trunc, PackedMatrix, PackedVector, PackingAxis};
use crate::nonlinear::{maxpool, maxpool_budget, relu, relu_budget};
use crate::offline::Manifest;
use crate::pss::{PackedShare, PackingConfig};
use crate::transport::{Party, PartyCounters, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub ell: u32,
    pub ell_x: u32,
}

impl FixedPointCodec {
    pub fn new(ell: u32, ell_x: u32) -> Result<Self> {
        if ell_x == 0 || ell_x + 2 >= ell {
            return Err(Error::InvalidConfig(format!("ell_x = {ell_x} must lie in 1..{}", ell - 2)));
        }
        Ok(FixedPointCodec { ell, ell_x })
    }

    /// Encodable values satisfy `|x| < bound`.
    pub fn bound(&self) -> f64 {
        (2f64).powi((self.ell - 2 - self.ell_x) as i32)
    }

    pub fn scale(&self) -> f64 {
        (2f64).powi(self.ell_x as i32)
    }

    pub fn encode_int(&self, x: f64) -> Result<i64> {
        if !x.is_finite() || x.abs() >= self.bound() {
            return Err(Error::OutOfRange(format!("{x} not below {}", self.bound())));
        }
        Ok((x * self.scale()).round() as i64)
    }

    pub fn encode<const L: u32>(&self, x: f64) -> Result<Fp<L>> {
        Ok(Fp::from_i64(self.encode_int(x)?))
    }

    pub fn decode<const L: u32>(&self, v: Fp<L>) -> f64 {
        v.to_signed() as f64 / self.scale()
    }

    pub fn decode_int(&self, v: i64) -> f64 {
        v as f64 / self.scale()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Image { h: usize, w: usize, c: usize },
    Vector { len: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image { h, w, c } => h * w * c,
            Shape::Vector { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Fc { inputs: usize, outputs: usize },
    Conv { f_w: usize, f_h: usize, c_i: usize, c_o: usize, stride: usize, padding: usize },
    Relu,
    MaxPool { window: usize },
    Flatten,
}

impl LayerSpec {
    /// Number of weights and biases stored for the layer.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Fc { inputs, outputs } => (inputs * outputs, outputs),
            LayerSpec::Conv { f_w, f_h, c_i, c_o, .. } => (c_o * f_h * f_w * c_i, 0),
            _ => (0, 0),
        }
    }

    pub fn truncates(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. } | LayerSpec::Conv { .. })
    }

    /// Output shape, or an error if `input` does not fit.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |what: &str| Err(Error::ShapeMismatch(format!("{what} cannot take {input:?}")));
        match (*self, input) {
            (LayerSpec::Fc { inputs, outputs }, s) => {
                if s.len() != inputs {
                    return bad("fc");
                }
                Ok(Shape::Vector { len: outputs })
            }
            (LayerSpec::Conv { f_w, f_h, c_i, c_o, stride, padding }, Shape::Image { h, w, c }) => {
                if c != c_i || stride == 0 || c_o == 0 || h + 2 * padding < f_h || w + 2 * padding < f_w {
                    return bad("conv");
                }
                Ok(Shape::Image {
                    h: (h + 2 * padding - f_h) / stride + 1,
                    w: (w + 2 * padding - f_w) / stride + 1,
                    c: c_o,
                })
            }
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::MaxPool { window }, Shape::Image { h, w, c }) => {
                if window == 0 || h < window || w < window {
                    return bad("maxpool");
                }
                Ok(Shape::Image { h: h / window, w: w / window, c })
            }
            (LayerSpec::Flatten, s) => Ok(Shape::Vector { len: s.len() }),
            _ => bad("layer"),
        }
    }
}

/// The public part of a model: architecture and number format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub ell: u32,
    pub ell_x: u32,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    /// weight blob, relative to the manifest
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
}

impl ModelManifest {
    /// Shape after each layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            cur = l.output_shape(cur).map_err(|e| Error::AtLayer(i, Box::new(e)))?;
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(self.shapes()?.last().copied().unwrap_or(self.input))
    }

    /// Truncations on the deepest path.
    pub fn truncation_depth(&self) -> usize {
        self.layers.iter().filter(|l| l.truncates()).count()
    }

    pub fn codec(&self) -> Result<FixedPointCodec> {
        FixedPointCodec::new(self.ell, self.ell_x)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub manifest: ModelManifest,
    pub params: Vec<LayerParams>,
}

impl Model {
    pub fn new(manifest: ModelManifest, params: Vec<LayerParams>) -> Result<Self> {
        let m = Model { manifest, params };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.manifest.shapes()?;
        if self.params.len() != self.manifest.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter sets for {} layers",
                self.params.len(),
                self.manifest.layers.len()
            )));
        }
        for (i, (l, p)) in self.manifest.layers.iter().zip(&self.params).enumerate() {
            let (nw, nb) = l.param_counts();
            if p.weights.len() != nw || p.bias.len() != nb {
                return Err(Error::AtLayer(
                    i,
                    Box::new(Error::ShapeMismatch(format!(
                        "expected {nw} weights and {nb} biases, got {} and {}",
                        p.weights.len(),
                        p.bias.len()
                    ))),
                ));
            }
        }
        Ok(())
    }

    /// Random weights uniform in `+-scale / sqrt(fan_in)`, biases in `+-bias`.
    pub fn random<R: Rng + ?Sized>(manifest: ModelManifest, scale: f64, bias: f64, rng: &mut R) -> Result<Self> {
        let params = manifest
            .layers
            .iter()
            .map(|l| {
                let (nw, nb) = l.param_counts();
                let fan_in = match *l {
                    LayerSpec::Fc { inputs, .. } => inputs,
                    LayerSpec::Conv { f_w, f_h, c_i, .. } => f_w * f_h * c_i,
                    _ => 1,
                };
                let a = scale / (fan_in as f64).sqrt();
                LayerParams {
                    weights: (0..nw).map(|_| rng.gen_range(-a..a)).collect(),
                    bias: (0..nb).map(|_| if bias > 0.0 { rng.gen_range(-bias..bias) } else { 0.0 }).collect(),
                }
            })
            .collect();
        Model::new(manifest, params)
    }

    /// Writes the manifest to `json` and the parameters, as little-endian
    /// f64 values layer by layer (weights then biases), next to it.
    pub fn save(&self, json: &Path) -> Result<()> {
        let blob = json.with_extension("bin");
        let mut manifest = self.manifest.clone();
        manifest.weights = Some(blob.file_name().unwrap().to_string_lossy().into_owned());
        let mut bytes = Vec::new();
        for p in &self.params {
            for v in p.weights.iter().chain(&p.bias) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(&blob, bytes)?;
        fs::write(json, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(json: &Path) -> Result<Self> {
        let manifest = load_manifest(json)?;
        let name = manifest.weights.clone().ok_or_else(|| Error::Format("manifest names no weight file".into()))?;
        let blob: PathBuf = json.parent().unwrap_or(Path::new(".")).join(name);
        let bytes = fs::read(blob)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("weight blob length is not a multiple of 8".into()));
        }
        let mut vals = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut params = Vec::with_capacity(manifest.layers.len());
        for l in &manifest.layers {
            let (nw, nb) = l.param_counts();
            let weights: Vec<f64> = vals.by_ref().take(nw).collect();
            let bias: Vec<f64> = vals.by_ref().take(nb).collect();
            if weights.len() != nw || bias.len() != nb {
                return Err(Error::Format("weight blob too short".into()));
            }
            params.push(LayerParams { weights, bias });
        }
        if vals.next().is_some() {
            return Err(Error::Format("weight blob too long".into()));
        }
        Model::new(manifest, params)
    }
}

pub fn load_manifest(json: &Path) -> Result<ModelManifest> {
    let m: ModelManifest = serde_json::from_str(&fs::read_to_string(json)?)?;
    m.codec()?;
    m.shapes()?;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layout {
    Replicated { h: usize, w: usize, c: usize },
    ChannelSlots { h: usize, w: usize, c: usize, groups: usize },
    /// `map[j]` is the logical index held in slot position `j`, if any
    Vector { len: usize, map: Vec<Option<usize>> },
}

impl Layout {
    fn vector(len: usize, k: usize) -> Layout {
        let padded = len.div_ceil(k) * k;
        Layout::Vector { len, map: (0..padded).map(|i| (i < len).then_some(i)).collect() }
    }

    pub fn shares(&self, k: usize) -> usize {
        match self {
            Layout::Replicated { h, w, c } => h * w * c,
            Layout::ChannelSlots { h, w, groups, .. } => h * w * groups,
            Layout::Vector { map, .. } => map.len() / k,
        }
    }

    pub fn logical_len(&self) -> usize {
        match self {
            Layout::Replicated { h, w, c } | Layout::ChannelSlots { h, w, c, .. } => h * w * c,
            Layout::Vector { len, .. } => *len,
        }
    }

    /// Logical index read from each slot position (one copy per replicated
    /// pixel).
    pub fn positions(&self, k: usize) -> Vec<Option<usize>> {
        match self {
            Layout::Replicated { h, w, c } => {
                (0..h * w * c * k).map(|j| (j % k == 0).then_some(j / k)).collect()
            }
            Layout::ChannelSlots { h, w, c, groups } => {
                let mut out = Vec::with_capacity(h * w * groups * k);
                for pos in 0..h * w {
                    for g in 0..*groups {
                        for i in 0..k {
                            let ch = g * k + i;
                            out.push((ch < *c).then_some(pos * c + ch));
                        }
                    }
                }
                out
            }
            Layout::Vector { map, .. } => map.clone(),
        }
    }

    /// Logical index written into each slot position when sharing.
    pub fn sources(&self, k: usize) -> Vec<Option<usize>> {
        match self {
            Layout::Replicated { h, w, c } => (0..h * w * c * k).map(|j| Some(j / k)).collect(),
            _ => self.positions(k),
        }
    }

    fn flatten(&self, k: usize) -> Layout {
        Layout::Vector { len: self.logical_len(), map: self.positions(k) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conversion {
    None,
    PackTrans,
    FlattenRepack,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub input: Layout,
    pub output: Layout,
    pub conversion: Conversion,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackingPlan {
    pub k: usize,
    pub input: Layout,
    pub layers: Vec<LayerPlan>,
}

impl PackingPlan {
    pub fn new(manifest: &ModelManifest, k: usize) -> Result<Self> {
        let shapes = manifest.shapes()?;
        let input = match manifest.input {
            Shape::Image { h, w, c } => {
                let spatial = manifest
                    .layers
                    .iter()
                    .take_while(|l| !matches!(l, LayerSpec::Fc { .. } | LayerSpec::Flatten))
                    .any(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }));
                if spatial {
                    Layout::Replicated { h, w, c }
                } else {
                    Layout::vector(h * w * c, k)
                }
            }
            Shape::Vector { len } => Layout::vector(len, k),
        };
        let mut cur = input.clone();
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (i, (l, shape)) in manifest.layers.iter().zip(&shapes).enumerate() {
            let err = |what: &str| Error::AtLayer(i, Box::new(Error::ShapeMismatch(what.to_string())));
            let (conversion, output) = match (*l, &cur) {
                (LayerSpec::Conv { c_o, .. }, Layout::Replicated { .. } | Layout::ChannelSlots { .. }) => {
                    let Shape::Image { h, w, .. } = *shape else { unreachable!() };
                    let conv = if matches!(cur, Layout::ChannelSlots { .. }) { Conversion::PackTrans } else { Conversion::None };
                    (conv, Layout::ChannelSlots { h, w, c: c_o, groups: c_o.div_ceil(k) })
                }
                (LayerSpec::Conv { .. }, _) => return Err(err("conv needs an image layout")),
                (LayerSpec::Relu, _) => (Conversion::None, cur.clone()),
                (LayerSpec::MaxPool { .. }, Layout::Replicated { .. }) => {
                    let Shape::Image { h, w, c } = *shape else { unreachable!() };
                    (Conversion::None, Layout::Replicated { h, w, c })
                }
                (LayerSpec::MaxPool { .. }, Layout::ChannelSlots { groups, .. }) => {
                    let Shape::Image { h, w, c } = *shape else { unreachable!() };
                    (Conversion::None, Layout::ChannelSlots { h, w, c, groups: *groups })
                }
                (LayerSpec::MaxPool { .. }, _) => return Err(err("maxpool needs an image layout")),
                (LayerSpec::Flatten, Layout::Vector { .. }) => (Conversion::None, cur.clone()),
                (LayerSpec::Flatten, _) => (Conversion::FlattenRepack, cur.flatten(k)),
                (LayerSpec::Fc { outputs, .. }, _) => {
                    let conv = if matches!(cur, Layout::Vector { .. }) { Conversion::None } else { Conversion::FlattenRepack };
                    (conv, Layout::vector(outputs, k))
                }
            };
            let lin = match (conversion, l) {
                (Conversion::FlattenRepack, LayerSpec::Fc { .. }) => cur.flatten(k),
                _ => cur.clone(),
            };
            layers.push(LayerPlan { input: lin, output: output.clone(), conversion });
            cur = output;
        }
        Ok(PackingPlan { k, input, layers })
    }

    pub fn output(&self) -> &Layout {
        self.layers.last().map_or(&self.input, |l| &l.output)
    }
}

/// Exact offline material consumed by [`infer_secure`].
pub fn randomness_budget(manifest: &ModelManifest, plan: &PackingPlan) -> Manifest {
    let k = plan.k;
    let mut m = Manifest::default();
    for (l, lp) in manifest.layers.iter().zip(&plan.layers) {
        match *l {
            LayerSpec::Conv { .. } => {
                if lp.conversion == Conversion::PackTrans {
                    m.pack_trans_masks += lp.input.shares(k) as u64;
                }
                m.pmat_masks += lp.output.shares(k) as u64;
            }
            LayerSpec::Fc { outputs, .. } => m.trunc_triples += outputs.div_ceil(k) as u64,
            LayerSpec::Relu => m.add(&relu_budget(manifest.ell).times(lp.input.shares(k) as u64)),
            LayerSpec::MaxPool { window } => {
                m.add(&maxpool_budget(manifest.ell, window * window).times(lp.output.shares(k) as u64))
            }
            LayerSpec::Flatten => {}
        }
    }
    m
}

/// One party's shares of the model parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerShares<const L: u32> {
    None,
    Conv { filters: PackedMatrix<L> },
    Fc { weights: PackedMatrix<L>, bias: Vec<PackedShare<L>> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShares<const L: u32> {
    pub layers: Vec<LayerShares<L>>,
}

impl<const L: u32> ModelShares<L> {
    pub fn values(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerShares::None => {}
                LayerShares::Conv { filters } => out.extend(filters.shares.iter().map(|s| s.value.value())),
                LayerShares::Fc { weights, bias } => {
                    out.extend(weights.shares.iter().chain(bias).map(|s| s.value.value()))
                }
            }
        }
        out
    }

    /// Number of share values party files carry for `plan`.
    pub fn value_count(manifest: &ModelManifest, plan: &PackingPlan) -> usize {
        let k = plan.k;
        manifest
            .layers
            .iter()
            .zip(&plan.layers)
            .map(|(l, lp)| match *l {
                LayerSpec::Conv { f_w, f_h, c_i, c_o, .. } => f_w * f_h * c_i * c_o.div_ceil(k),
                LayerSpec::Fc { outputs, .. } => lp.input.shares(k) * outputs + outputs.div_ceil(k),
                _ => 0,
            })
            .sum()
    }

    pub fn from_values(manifest: &ModelManifest, plan: &PackingPlan, party: usize, d: usize, vals: &[u64]) -> Result<Self> {
        if vals.len() != Self::value_count(manifest, plan) {
            return Err(Error::ShapeMismatch(format!(
                "{} model share values, expected {}",
                vals.len(),
                Self::value_count(manifest, plan)
            )));
        }
        let k = plan.k;
        let mut it = vals.iter();
        let mut take = |count: usize| -> Result<Vec<PackedShare<L>>> {
            it.by_ref().take(count).map(|&v| Ok(PackedShare::new(party, Fp::from_canonical(v)?, d))).collect()
        };
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (l, lp) in manifest.layers.iter().zip(&plan.layers) {
            layers.push(match *l {
                LayerSpec::Conv { f_w, f_h, c_i, c_o, .. } => {
                    let (rows, cols) = (f_w * f_h * c_i, c_o.div_ceil(k));
                    LayerShares::Conv {
                        filters: PackedMatrix { rows, cols, axis: PackingAxis::Slots, shares: take(rows * cols)? },
                    }
                }
                LayerSpec::Fc { outputs, .. } => {
                    let blocks = lp.input.shares(k);
                    let weights =
                        PackedMatrix { rows: blocks * k, cols: outputs, axis: PackingAxis::RowBlocks, shares: take(blocks * outputs)? };
                    LayerShares::Fc { weights, bias: take(outputs.div_ceil(k))? }
                }
                _ => LayerShares::None,
            });
        }
        Ok(ModelShares { layers })
    }
}

fn encode_all<const L: u32>(codec: &FixedPointCodec, xs: &[f64]) -> Result<Vec<Fp<L>>> {
    xs.iter().map(|&x| codec.encode(x)).collect()
}

/// Shares slot values `slots` (a multiple of `k` long) at degree `d`,
/// returning `[party - 1][share]`.
fn share_slots<const L: u32, R: Rng + ?Sized>(
    cfg: &PackingConfig<L>,
    slots: &[Fp<L>],
    rng: &mut R,
) -> Result<Vec<Vec<PackedShare<L>>>> {
    let mut out = vec![Vec::with_capacity(slots.len() / cfg.k()); cfg.n()];
    for chunk in slots.chunks(cfg.k()) {
        for (j, s) in cfg.share(chunk, cfg.d(), rng)?.into_iter().enumerate() {
            out[j].push(s);
        }
    }
    Ok(out)
}

/// The model owner's step: every parameter is encoded, packed per the plan
/// and shared at degree `d`. Returns one [`ModelShares`] per party.
pub fn share_model<const L: u32, R: Rng + ?Sized>(
    cfg: &PackingConfig<L>,
    model: &Model,
    plan: &PackingPlan,
    rng: &mut R,
) -> Result<Vec<ModelShares<L>>> {
    model.validate()?;
    check_plan_k(cfg, plan)?;
    let codec = model.manifest.codec()?;
    let (n, k) = (cfg.n(), cfg.k());
    let mut per_party: Vec<ModelShares<L>> = (0..n).map(|_| ModelShares { layers: Vec::new() }).collect();
    for (i, ((l, p), lp)) in model.manifest.layers.iter().zip(&model.params).zip(&plan.layers).enumerate() {
        let at = |e| Error::AtLayer(i, Box::new(e));
        match *l {
            LayerSpec::Conv { f_w, f_h, c_i, c_o, .. } => {
                let w = encode_all::<L>(&codec, &p.weights).map_err(at)?;
                let (rows, groups) = (f_w * f_h * c_i, c_o.div_ceil(k));
                let mut slots = Vec::with_capacity(rows * groups * k);
                for kidx in 0..rows {
                    for g in 0..groups {
                        for s in 0..k {
                            let o = g * k + s;
                            slots.push(if o < c_o { w[o * rows + kidx] } else { Fp::ZERO });
                        }
                    }
                }
                for (j, shares) in share_slots(cfg, &slots, rng)?.into_iter().enumerate() {
                    per_party[j].layers.push(LayerShares::Conv {
                        filters: PackedMatrix { rows, cols: groups, axis: PackingAxis::Slots, shares },
                    });
                }
            }
            LayerSpec::Fc { outputs, .. } => {
                let w = encode_all::<L>(&codec, &p.weights).map_err(at)?;
                let b = encode_all::<L>(&codec, &p.bias).map_err(at)?;
                let rows = lp.input.positions(k);
                let blocks = rows.len() / k;
                // block-major, each share packs k consecutive rows of a column
                let mut slots = Vec::with_capacity(rows.len() * outputs);
                for bi in 0..blocks {
                    for o in 0..outputs {
                        for r in &rows[bi * k..(bi + 1) * k] {
                            slots.push(r.map_or(Fp::ZERO, |src| w[src * outputs + o]));
                        }
                    }
                }
                let mut bias = b.clone();
                bias.resize(outputs.div_ceil(k) * k, Fp::ZERO);
                let ws = share_slots(cfg, &slots, rng)?;
                let bs = share_slots(cfg, &bias, rng)?;
                for (j, (shares, bias)) in ws.into_iter().zip(bs).enumerate() {
                    per_party[j].layers.push(LayerShares::Fc {
                        weights: PackedMatrix { rows: blocks * k, cols: outputs, axis: PackingAxis::RowBlocks, shares },
                        bias,
                    });
                }
            }
            _ => per_party.iter_mut().for_each(|m| m.layers.push(LayerShares::None)),
        }
    }
    Ok(per_party)
}

fn check_plan_k<const L: u32>(cfg: &PackingConfig<L>, plan: &PackingPlan) -> Result<()> {
    if cfg.k() != plan.k {
        return Err(Error::ConfigMismatch(format!("plan built for k = {}, sharing uses k = {}", plan.k, cfg.k())));
    }
    Ok(())
}

/// The client's step: encodes a logical input tensor and shares it in the
/// plan's input layout. Returns `[party - 1][share]`.
pub fn share_input<const L: u32, R: Rng + ?Sized>(
    cfg: &PackingConfig<L>,
    plan: &PackingPlan,
    codec: &FixedPointCodec,
    input: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<PackedShare<L>>>> {
    check_plan_k(cfg, plan)?;
    if input.len() != plan.input.logical_len() {
        return Err(Error::ShapeMismatch(format!("input of {} values, model takes {}", input.len(), plan.input.logical_len())));
    }
    let enc = encode_all::<L>(codec, input)?;
    let slots: Vec<Fp<L>> = plan.input.sources(cfg.k()).iter().map(|s| s.map_or(Fp::ZERO, |i| enc[i])).collect();
    share_slots(cfg, &slots, rng)
}

/// Reconstructs a tensor held in `layout` from every party's shares and
/// returns its logical values.
pub fn reveal_values<const L: u32>(
    cfg: &PackingConfig<L>,
    layout: &Layout,
    per_party: &[Vec<PackedShare<L>>],
) -> Result<Vec<Fp<L>>> {
    let slots = cfg.reconstruct_vector(per_party)?;
    let pos = layout.positions(cfg.k());
    if slots.len() != pos.len() {
        return Err(Error::ShapeMismatch(format!("{} slots for a layout of {}", slots.len(), pos.len())));
    }
    let mut out = vec![Fp::ZERO; layout.logical_len()];
    for (v, p) in slots.into_iter().zip(pos) {
        if let Some(i) = p {
            out[i] = v;
        }
    }
    Ok(out)
}

/// Client-side decoding of the revealed output.
pub fn reveal_output<const L: u32>(
    cfg: &PackingConfig<L>,
    plan: &PackingPlan,
    codec: &FixedPointCodec,
    per_party: &[Vec<PackedShare<L>>],
) -> Result<Vec<f64>> {
    Ok(reveal_values(cfg, plan.output(), per_party)?.into_iter().map(|v| codec.decode(v)).collect())
}

/// Output shares plus the online traffic of each layer for this party.
#[derive(Clone, Debug)]
pub struct InferenceOutput<const L: u32> {
    pub shares: Vec<PackedShare<L>>,
    pub per_layer: Vec<PartyCounters>,
}

fn zero_share<const L: u32>(party: &Party<L>) -> PackedShare<L> {
    PackedShare::new(party.id, Fp::ZERO, party.d())
}

fn conv_step<const L: u32>(
    party: &mut Party<L>,
    spec: (usize, usize, usize, usize, usize),
    lp: &LayerPlan,
    filters: &PackedMatrix<L>,
    input: Vec<PackedShare<L>>,
) -> Result<Vec<PackedShare<L>>> {
    let (f_w, f_h, stride, padding, _c_o) = spec;
    let k = party.k();
    let (h, w, c, pixels) = match lp.input {
        Layout::Replicated { h, w, c } => (h, w, c, input),
        Layout::ChannelSlots { h, w, c, groups } => {
            let parts = pack_trans(party, &input)?;
            let mut px = Vec::with_capacity(h * w * c);
            for pos in 0..h * w {
                for g in 0..groups {
                    for (i, s) in parts[pos * groups + g].iter().enumerate() {
                        if g * k + i < c {
                            px.push(*s);
                        }
                    }
                }
            }
            (h, w, c, px)
        }
        Layout::Vector { .. } => return Err(Error::ShapeMismatch("conv on a vector".into())),
    };
    let Layout::ChannelSlots { h: ho, w: wo, .. } = lp.output else { unreachable!() };
    let cols = f_w * f_h * c;
    let zero = zero_share(party);
    let mut a = Vec::with_capacity(ho * wo * cols);
    for oy in 0..ho {
        for ox in 0..wo {
            for dy in 0..f_h {
                for dx in 0..f_w {
                    let iy = (oy * stride + dy) as isize - padding as isize;
                    let ix = (ox * stride + dx) as isize - padding as isize;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                    for ch in 0..c {
                        a.push(if inside { pixels[(iy as usize * w + ix as usize) * c + ch] } else { zero });
                    }
                }
            }
        }
    }
    let a = PackedMatrix { rows: ho * wo, cols, axis: PackingAxis::Slots, shares: a };
    Ok(pmat_mult_trunc(party, &a, filters)?.shares)
}

fn maxpool_step<const L: u32>(
    party: &mut Party<L>,
    window: usize,
    lp: &LayerPlan,
    input: Vec<PackedShare<L>>,
) -> Result<Vec<PackedShare<L>>> {
    let (w, per_pos) = match lp.input {
        Layout::Replicated { w, c, .. } => (w, c),
        Layout::ChannelSlots { w, groups, .. } => (w, groups),
        Layout::Vector { .. } => return Err(Error::ShapeMismatch("maxpool on a vector".into())),
    };
    let (ho, wo) = match lp.output {
        Layout::Replicated { h, w, .. } | Layout::ChannelSlots { h, w, .. } => (h, w),
        Layout::Vector { .. } => unreachable!(),
    };
    let mut windows = Vec::with_capacity(ho * wo * per_pos);
    for oy in 0..ho {
        for ox in 0..wo {
            for g in 0..per_pos {
                let mut win = Vec::with_capacity(window * window);
                for dy in 0..window {
                    for dx in 0..window {
                        win.push(input[((oy * window + dy) * w + ox * window + dx) * per_pos + g]);
                    }
                }
                windows.push(win);
            }
        }
    }
    maxpool(party, &windows)
}

fn layer_step<const L: u32>(
    party: &mut Party<L>,
    spec: &LayerSpec,
    lp: &LayerPlan,
    params: &LayerShares<L>,
    input: Vec<PackedShare<L>>,
) -> Result<Vec<PackedShare<L>>> {
    let k = party.k();
    if input.len() != lp.input.shares(k) {
        return Err(Error::ShapeMismatch(format!("{} input shares, layer expects {}", input.len(), lp.input.shares(k))));
    }
    match (*spec, params) {
        (LayerSpec::Conv { f_w, f_h, stride, padding, c_o, .. }, LayerShares::Conv { filters }) => {
            conv_step(party, (f_w, f_h, stride, padding, c_o), lp, filters, input)
        }
        (LayerSpec::Fc { outputs, .. }, LayerShares::Fc { weights, bias }) => {
            let a = PackedVector { len: input.len() * k, shares: input };
            let out = vec_mat_mult_trunc(party, &a, weights)?;
            if out.len != outputs || bias.len() != out.shares.len() {
                return Err(Error::ShapeMismatch("fc bias".into()));
            }
            Ok(out.shares.iter().zip(bias).map(|(s, b)| s.add(b)).collect())
        }
        (LayerSpec::Relu, _) => relu(party, &input),
        (LayerSpec::MaxPool { window }, _) => maxpool_step(party, window, lp, input),
        (LayerSpec::Flatten, _) => Ok(input),
        _ => Err(Error::ShapeMismatch("model shares do not match the layer".into())),
    }
}

/// Runs the model on shared input. All offline material must already be in
/// `party.material`; errors carry the index of the failing layer.
pub fn infer_secure<const L: u32>(
    party: &mut Party<L>,
    manifest: &ModelManifest,
    plan: &PackingPlan,
    model: &ModelShares<L>,
    input: &[PackedShare<L>],
) -> Result<InferenceOutput<L>> {
    if plan.k != party.k() {
        return Err(Error::ConfigMismatch(format!("plan for k = {}, party runs k = {}", plan.k, party.k())));
    }
    if model.layers.len() != manifest.layers.len() || plan.layers.len() != manifest.layers.len() {
        return Err(Error::ShapeMismatch("model shares, plan and manifest disagree on layer count".into()));
    }
    party.net.set_phase(Phase::Online);
    let mut cur = input.to_vec();
    let mut per_layer = Vec::with_capacity(manifest.layers.len());
    for (i, ((spec, lp), params)) in manifest.layers.iter().zip(&plan.layers).zip(&model.layers).enumerate() {
        let before = party.net.counters(Phase::Online);
        cur = layer_step(party, spec, lp, params, cur).map_err(|e| Error::AtLayer(i, Box::new(e)))?;
        per_layer.push(party.net.counters(Phase::Online).delta(&before));
    }
    Ok(InferenceOutput { shares: cur, per_layer })
}

/// Little-endian share file: `PKS1`, a u32 header length, the JSON header,
/// then `count` u64 values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareHeader {
    pub kind: String,
    pub party: usize,
    pub n: usize,
    pub k: usize,
    pub ell: u32,
    pub ell_x: u32,
    pub count: usize,
}

const SHARE_MAGIC: &[u8; 4] = b"PKS1";

pub fn write_share_file(path: &Path, header: &ShareHeader, values: &[u64]) -> Result<()> {
    if header.count != values.len() {
        return Err(Error::Format("header count does not match the values".into()));
    }
    let head = serde_json::to_vec(header)?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(SHARE_MAGIC)?;
    f.write_all(&(head.len() as u32).to_le_bytes())?;
    f.write_all(&head)?;
    for v in values {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_share_file(path: &Path) -> Result<(ShareHeader, Vec<u64>)> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != SHARE_MAGIC {
        return Err(Error::Format(format!("{} is not a share file", path.display())));
    }
    let mut len = [0u8; 4];
    f.read_exact(&mut len)?;
    let mut head = vec![0u8; u32::from_le_bytes(len) as usize];
    f.read_exact(&mut head)?;
    let header: ShareHeader = serde_json::from_slice(&head)?;
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if rest.len() != header.count * 8 {
        return Err(Error::Format(format!("expected {} values, file holds {} bytes", header.count, rest.len())));
    }
    let values = rest.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}
