//! UNet encoder/decoder variants with a coordinate regression head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{ExecMode, Graph, Var};
use crate::{NnError, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    UNet,
    AttentionUNet,
    CoordAttUNet,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::UNet, Variant::AttentionUNet, Variant::CoordAttUNet];

    pub fn has_attention(self) -> bool {
        !matches!(self, Variant::UNet)
    }

    pub fn has_coords(self) -> bool {
        matches!(self, Variant::CoordAttUNet)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::UNet => "UNet",
            Variant::AttentionUNet => "AttentionUNet",
            Variant::CoordAttUNet => "CoordAttUNet",
        })
    }
}

/// `PaperLiteral`: `psi = sigmoid(relu(g + x))` with one gate value per skip
/// channel, so `psi` lies in `[0.5, 1)`. `StandardGate` reduces `relu(g + x)`
/// to a single channel with a 1×1 convolution before the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionForm {
    PaperLiteral,
    StandardGate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_landmarks: usize,
    pub input_size: usize,
    pub attention_form: AttentionForm,
    /// Side of the adaptive average pool in the regression head.
    #[serde(default = "default_head_pool")]
    pub head_pool: usize,
}

fn default_head_pool() -> usize {
    8
}

impl ModelConfig {
    /// 64×64 input, 8 base channels.
    pub fn toy(variant: Variant) -> Self {
        Self {
            variant,
            depth: 4,
            base_channels: 8,
            in_channels: 1,
            out_landmarks: 3,
            input_size: 64,
            attention_form: AttentionForm::PaperLiteral,
            head_pool: default_head_pool(),
        }
    }

    /// 512×512 input, 64 base channels.
    pub fn full(variant: Variant) -> Self {
        Self { base_channels: 64, input_size: 512, ..Self::toy(variant) }
    }

    pub fn outputs(&self) -> usize {
        2 * self.out_landmarks
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_landmarks == 0 {
            return bad(format!("zero-sized dimension in {self:?}"));
        }
        let stride = 1usize << (self.depth - 1);
        if self.input_size % stride != 0 {
            return bad(format!("input size {} not divisible by {stride}", self.input_size));
        }
        if self.head_pool == 0 || self.head_pool > self.input_size {
            return bad(format!("head pool {} out of range", self.head_pool));
        }
        Ok(())
    }

    /// Every parameter name with its shape, in the order layers are applied.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, o: usize, i: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![o, i, k, k]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        let first_in = self.in_channels + if self.variant.has_coords() { 2 } else { 0 };
        for l in 0..self.depth {
            let c = self.channels(l);
            let cin = if l == 0 { first_in } else { self.channels(l - 1) };
            conv(format!("enc{l}.conv0"), c, cin, 3);
            conv(format!("enc{l}.conv1"), c, c, 3);
        }
        for l in (0..self.depth.saturating_sub(1)).rev() {
            let c = self.channels(l);
            conv(format!("dec{l}.up"), c, self.channels(l + 1), 3);
            if self.variant.has_attention() {
                conv(format!("dec{l}.gate.wg"), c, c, 1);
                conv(format!("dec{l}.gate.wx"), c, c, 1);
                if self.attention_form == AttentionForm::StandardGate {
                    conv(format!("dec{l}.gate.psi"), 1, c, 1);
                }
            }
            conv(format!("dec{l}.conv0"), c, 2 * c, 3);
            conv(format!("dec{l}.conv1"), c, c, 3);
        }
        let n = self.outputs();
        conv("head.conv".into(), n, self.channels(0), 1);
        out.push(("head.fc.weight".into(), vec![n, n * self.head_pool * self.head_pool]));
        out.push(("head.fc.bias".into(), vec![n]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Checks that `store` holds exactly this config's parameters.
    pub fn check_params(&self, store: &ParamStore) -> Result<(), NnError> {
        let shapes = self.param_shapes();
        if shapes.len() != store.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                store.len()
            )));
        }
        for (name, shape) in shapes {
            let t = store.get(&name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if t.shape() != shape {
                return Err(NnError::ShapeMismatch(format!("{name}: expected {shape:?}, found {:?}", t.shape())));
            }
        }
        Ok(())
    }
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
/// Values are drawn on the `f32` grid so that saved files reproduce them
/// exactly.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore, NnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in config.param_shapes() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound) as f32 as f64).collect()
        };
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

fn conv(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var, NnError> {
    let w = g.param(store, &format!("{name}.weight"))?;
    let b = g.param(store, &format!("{name}.bias"))?;
    g.conv2d(x, w, b)
}

fn conv_relu(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var, NnError> {
    let y = conv(g, store, name, x)?;
    g.relu(y)
}

/// Gates the skip features `x` with the decoder features `gate` using the
/// parameters under `prefix` (`{prefix}.wg`, `{prefix}.wx`, and for
/// [`AttentionForm::StandardGate`] `{prefix}.psi`).
pub fn attention_gate_graph(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    form: AttentionForm,
    x: Var,
    gate: Var,
) -> Result<Var, NnError> {
    let (xs, gs) = (g.value(x).shape().to_vec(), g.value(gate).shape().to_vec());
    if xs.len() != 4 || gs.len() != 4 || xs[0] != gs[0] || xs[2..] != gs[2..] {
        return Err(NnError::ShapeMismatch(format!("attention skip {xs:?} vs gating {gs:?}")));
    }
    let gg = conv(g, store, &format!("{prefix}.wg"), gate)?;
    let xx = conv(g, store, &format!("{prefix}.wx"), x)?;
    let sum = g.add(gg, xx)?;
    let mut psi = g.relu(sum)?;
    if form == AttentionForm::StandardGate {
        psi = conv(g, store, &format!("{prefix}.psi"), psi)?;
    }
    let psi = g.sigmoid(psi)?;
    g.mul(x, psi)
}

/// Standalone attention gate evaluation; see [`attention_gate_graph`].
pub fn attention_gate(
    x: &Tensor,
    gate: &Tensor,
    store: &ParamStore,
    prefix: &str,
    form: AttentionForm,
) -> Result<Tensor, NnError> {
    let mut g = Graph::new(ExecMode::Sequential);
    let xv = g.input(x.clone())?;
    let gv = g.input(gate.clone())?;
    let a = attention_gate_graph(&mut g, store, prefix, form, xv, gv)?;
    Ok(g.value(a).clone())
}

/// Records the network on `g` and returns the `(batch, outputs)` node of
/// predicted coordinates in input pixels.
pub fn forward_graph(g: &mut Graph, config: &ModelConfig, store: &ParamStore, input: Var) -> Result<Var, NnError> {
    let (_, c, h, w) = g.value(input).dims4()?;
    if c != config.in_channels || h != config.input_size || w != config.input_size {
        return Err(NnError::ShapeMismatch(format!(
            "input {:?} for a {}-channel {}×{} model",
            g.value(input).shape(),
            config.in_channels,
            config.input_size,
            config.input_size
        )));
    }
    let mut x = if config.variant.has_coords() { g.add_coords(input)? } else { input };
    let mut skips = Vec::with_capacity(config.depth);
    for l in 0..config.depth {
        if l > 0 {
            x = g.max_pool2(x)?;
        }
        x = conv_relu(g, store, &format!("enc{l}.conv0"), x)?;
        x = conv_relu(g, store, &format!("enc{l}.conv1"), x)?;
        skips.push(x);
    }
    for l in (0..config.depth - 1).rev() {
        let up = g.upsample2(x)?;
        let gate = conv_relu(g, store, &format!("dec{l}.up"), up)?;
        let skip = if config.variant.has_attention() {
            attention_gate_graph(g, store, &format!("dec{l}.gate"), config.attention_form, skips[l], gate)?
        } else {
            skips[l]
        };
        let cat = g.concat(skip, gate)?;
        x = conv_relu(g, store, &format!("dec{l}.conv0"), cat)?;
        x = conv_relu(g, store, &format!("dec{l}.conv1"), x)?;
    }
    let y = conv(g, store, "head.conv", x)?;
    let y = g.adaptive_avg_pool(y, config.head_pool)?;
    let fw = g.param(store, "head.fc.weight")?;
    let fb = g.param(store, "head.fc.bias")?;
    let y = g.linear(y, fw, fb)?;
    // zero output sits at the image centre, unit output spans the image
    let span = (config.input_size - 1) as f64;
    g.affine(y, span, 0.5 * span)
}

/// Predicted coordinates for a `(batch, in_channels, S, S)` input.
pub fn forward(config: &ModelConfig, store: &ParamStore, batch: &Tensor, mode: ExecMode) -> Result<Tensor, NnError> {
    let mut g = Graph::new(mode);
    let x = g.input(batch.clone())?;
    let y = forward_graph(&mut g, config, store, x)?;
    Ok(g.value(y).clone())
}
