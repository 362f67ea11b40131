//! Parametric DRM policy: four small MLP heads (active Big cores, active
//! Little cores, Big frequency, Little frequency) over normalized hardware
//! counter features, plus a flat parameter-vector codec so optimizers can
//! treat a policy as a point in R^d.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of normalized counter features a policy consumes.
pub const NUM_FEATURES: usize = 12;

/// Feature layout inside [`SystemState`].
pub mod feature {
    pub const INSTRUCTIONS: usize = 0;
    pub const CYCLES: usize = 1;
    pub const BRANCH_MISSES: usize = 2;
    pub const L2_MISSES: usize = 3;
    pub const MEM_ACCESSES: usize = 4;
    pub const EXT_MEM_REQUESTS: usize = 5;
    pub const LITTLE_UTIL_SUM: usize = 6;
    pub const BIG_UTIL_BASE: usize = 7; // four consecutive per-core slots
    pub const CHIP_POWER: usize = 11;
}

/// Hardware-counter snapshot, normalized to [0, 1] by the per-feature scale
/// constants of the experiment calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    features: [f64; NUM_FEATURES],
}

impl SystemState {
    pub fn new(features: [f64; NUM_FEATURES]) -> Result<Self> {
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::input("system state features must be finite"));
        }
        Ok(SystemState { features })
    }

    pub fn features(&self) -> &[f64; NUM_FEATURES] {
        &self.features
    }
}

/// Number of active Big cores can be zero; one Little core stays on to run
/// the operating system.
pub const MAX_BIG_CORES: usize = 4;
pub const MAX_LITTLE_CORES: usize = 4;
pub const BIG_FREQ_LEVELS: usize = 19; // 200..=2000 MHz in 100 MHz steps
pub const LITTLE_FREQ_LEVELS: usize = 13; // 200..=1400 MHz in 100 MHz steps

/// One resource-management decision: active core counts and frequency level
/// per cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DrmDecision {
    a_big: usize,
    a_little: usize,
    f_big_idx: usize,
    f_little_idx: usize,
}

impl DrmDecision {
    pub fn new(a_big: usize, a_little: usize, f_big_idx: usize, f_little_idx: usize) -> Result<Self> {
        if a_big > MAX_BIG_CORES {
            return Err(Error::input(format!("a_big {a_big} out of range 0..=4")));
        }
        if a_little == 0 || a_little > MAX_LITTLE_CORES {
            return Err(Error::input(format!("a_little {a_little} out of range 1..=4")));
        }
        if f_big_idx >= BIG_FREQ_LEVELS {
            return Err(Error::input(format!("f_big index {f_big_idx} out of range 0..19")));
        }
        if f_little_idx >= LITTLE_FREQ_LEVELS {
            return Err(Error::input(format!("f_little index {f_little_idx} out of range 0..13")));
        }
        Ok(DrmDecision { a_big, a_little, f_big_idx, f_little_idx })
    }

    pub fn a_big(&self) -> usize {
        self.a_big
    }

    pub fn a_little(&self) -> usize {
        self.a_little
    }

    pub fn f_big_idx(&self) -> usize {
        self.f_big_idx
    }

    pub fn f_little_idx(&self) -> usize {
        self.f_little_idx
    }

    pub fn f_big_mhz(&self) -> u32 {
        200 + 100 * self.f_big_idx as u32
    }

    pub fn f_little_mhz(&self) -> u32 {
        200 + 100 * self.f_little_idx as u32
    }

    pub fn f_big_ghz(&self) -> f64 {
        self.f_big_mhz() as f64 / 1000.0
    }

    pub fn f_little_ghz(&self) -> f64 {
        self.f_little_mhz() as f64 / 1000.0
    }

    /// Every reachable decision; 5 * 4 * 19 * 13 = 4940 of them.
    pub fn enumerate_all() -> impl Iterator<Item = DrmDecision> {
        (0..=MAX_BIG_CORES).flat_map(|a_big| {
            (1..=MAX_LITTLE_CORES).flat_map(move |a_little| {
                (0..BIG_FREQ_LEVELS).flat_map(move |f_big_idx| {
                    (0..LITTLE_FREQ_LEVELS).map(move |f_little_idx| DrmDecision {
                        a_big,
                        a_little,
                        f_big_idx,
                        f_little_idx,
                    })
                })
            })
        })
    }
}

/// Shape of the four policy heads. Each head is its own MLP from the feature
/// vector through `hidden` rectified layers to a softmax output sized by the
/// head's action count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<usize>,
}

impl Default for PolicyArchitecture {
    fn default() -> Self {
        PolicyArchitecture {
            input_dim: NUM_FEATURES,
            hidden: vec![8, 8],
            heads: vec![
                MAX_BIG_CORES + 1,
                MAX_LITTLE_CORES,
                BIG_FREQ_LEVELS,
                LITTLE_FREQ_LEVELS,
            ],
        }
    }
}

impl PolicyArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::input("input_dim must be >= 1"));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| *h == 0) {
            return Err(Error::input("each head needs at least one output"));
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::input("hidden layers need at least one unit"));
        }
        Ok(())
    }

    /// True when the heads can drive a [`DrmDecision`].
    pub fn is_drm_compatible(&self) -> bool {
        self.input_dim == NUM_FEATURES
            && self.heads
                == [
                    MAX_BIG_CORES + 1,
                    MAX_LITTLE_CORES,
                    BIG_FREQ_LEVELS,
                    LITTLE_FREQ_LEVELS,
                ]
    }

    /// Layer fan-in/fan-out pairs for one head.
    fn head_layer_dims(&self, head_out: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, head_out));
        dims
    }
}

/// Exact parameter count: sum over heads and layers of (fan_in + 1) * fan_out.
pub fn param_count(arch: &PolicyArchitecture) -> usize {
    arch.heads
        .iter()
        .map(|&out| {
            arch.head_layer_dims(out)
                .iter()
                .map(|(i, o)| (i + 1) * o)
                .sum::<usize>()
        })
        .sum()
}

/// Flat policy parameter vector. Layout: per head in declaration order, per
/// layer input-to-output, weights (row-major, output by input) then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(arch: &PolicyArchitecture, theta: Vec<f64>) -> Result<Self> {
        let d = param_count(arch);
        if theta.len() != d {
            return Err(Error::input(format!(
                "theta has length {}, architecture requires d = {d}",
                theta.len()
            )));
        }
        Ok(PolicyParams { theta })
    }

    pub fn zeros(arch: &PolicyArchitecture) -> Self {
        PolicyParams { theta: vec![0.0; param_count(arch)] }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }
}

/// Dense layer in decoded form: `weights[out][in]` plus one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// One decoded head: its layers from input to softmax logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadNetwork {
    pub layers: Vec<LayerWeights>,
}

/// Unpacks a flat parameter vector into per-head weight matrices.
pub fn decode(arch: &PolicyArchitecture, params: &PolicyParams) -> Result<Vec<HeadNetwork>> {
    arch.validate()?;
    let theta = params.theta();
    let d = param_count(arch);
    if theta.len() != d {
        return Err(Error::input(format!(
            "theta has length {}, architecture requires d = {d}",
            theta.len()
        )));
    }
    let mut offset = 0;
    let mut heads = Vec::with_capacity(arch.heads.len());
    for &head_out in &arch.heads {
        let mut layers = Vec::new();
        for (fan_in, fan_out) in arch.head_layer_dims(head_out) {
            let mut weights = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                weights.push(theta[offset..offset + fan_in].to_vec());
                offset += fan_in;
            }
            let biases = theta[offset..offset + fan_out].to_vec();
            offset += fan_out;
            layers.push(LayerWeights { weights, biases });
        }
        heads.push(HeadNetwork { layers });
    }
    debug_assert_eq!(offset, d);
    Ok(heads)
}

/// Packs per-head weight matrices back into the flat layout; exact inverse
/// of [`decode`].
pub fn encode(arch: &PolicyArchitecture, heads: &[HeadNetwork]) -> Result<PolicyParams> {
    arch.validate()?;
    if heads.len() != arch.heads.len() {
        return Err(Error::input(format!(
            "expected {} heads, got {}",
            arch.heads.len(),
            heads.len()
        )));
    }
    let mut theta = Vec::with_capacity(param_count(arch));
    for (head, &head_out) in heads.iter().zip(&arch.heads) {
        let dims = arch.head_layer_dims(head_out);
        if head.layers.len() != dims.len() {
            return Err(Error::input("head layer count does not match architecture"));
        }
        for (layer, (fan_in, fan_out)) in head.layers.iter().zip(dims) {
            if layer.weights.len() != fan_out
                || layer.weights.iter().any(|r| r.len() != fan_in)
                || layer.biases.len() != fan_out
            {
                return Err(Error::input("layer shape does not match architecture"));
            }
            for row in &layer.weights {
                theta.extend_from_slice(row);
            }
            theta.extend_from_slice(&layer.biases);
        }
    }
    PolicyParams::new(arch, theta)
}

const HEAD_NAMES: [&str; 4] = ["a_big", "a_little", "f_big", "f_little"];

/// Forward pass of one head directly over the flat parameter slice; returns
/// the argmax logit index (ties go to the lowest index).
fn head_argmax(
    arch: &PolicyArchitecture,
    theta: &[f64],
    offset: &mut usize,
    head_out: usize,
    features: &[f64],
    head_name: &str,
) -> Result<usize> {
    let mut x: Vec<f64> = features.to_vec();
    let dims = arch.head_layer_dims(head_out);
    let last = dims.len() - 1;
    for (li, (fan_in, fan_out)) in dims.iter().enumerate() {
        let mut y = vec![0.0; *fan_out];
        for (o, out) in y.iter_mut().enumerate() {
            let row = &theta[*offset + o * fan_in..*offset + (o + 1) * fan_in];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(&x) {
                acc += w * v;
            }
            *out = acc;
        }
        *offset += fan_in * fan_out;
        for (o, out) in y.iter_mut().enumerate() {
            *out += theta[*offset + o];
        }
        *offset += fan_out;
        // check before the rectifier: max() would silently absorb a NaN
        if y.iter().any(|v| v.is_nan()) {
            return Err(Error::input(format!("NaN in forward pass of head {head_name}")));
        }
        if li < last {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        x = y;
    }
    // argmax of the softmax equals argmax of the logits; ties -> lowest index
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Runs the four heads over the state and assembles a decision. Greedy
/// argmax decoding: same (theta, state) always gives the same decision.
pub fn decide(
    arch: &PolicyArchitecture,
    params: &PolicyParams,
    state: &SystemState,
) -> Result<DrmDecision> {
    if !arch.is_drm_compatible() {
        return Err(Error::input(
            "architecture heads do not match the DRM decision space (5, 4, 19, 13)",
        ));
    }
    let theta = params.theta();
    let d = param_count(arch);
    if theta.len() != d {
        return Err(Error::input(format!(
            "theta has length {}, architecture requires d = {d}",
            theta.len()
        )));
    }
    let mut offset = 0;
    let mut picks = [0usize; 4];
    for (slot, (&head_out, name)) in arch.heads.iter().zip(HEAD_NAMES).enumerate() {
        picks[slot] = head_argmax(arch, theta, &mut offset, head_out, state.features(), name)?;
    }
    DrmDecision::new(picks[0], 1 + picks[1], picks[2], picks[3])
}

const POLICY_MAGIC: &[u8; 4] = b"DRMP";
const POLICY_FORMAT_VERSION: u32 = 1;

/// Writes a policy file: header (magic, version, architecture, d) followed
/// by theta as little-endian 32-bit floats.
pub fn save_policy(path: &Path, arch: &PolicyArchitecture, params: &PolicyParams) -> Result<()> {
    let d = param_count(arch);
    if params.theta().len() != d {
        return Err(Error::input("theta length does not match architecture"));
    }
    let mut buf: Vec<u8> = Vec::with_capacity(64 + 4 * d);
    buf.extend_from_slice(POLICY_MAGIC);
    let push_u32 = |buf: &mut Vec<u8>, v: u32| buf.extend_from_slice(&v.to_le_bytes());
    push_u32(&mut buf, POLICY_FORMAT_VERSION);
    push_u32(&mut buf, arch.input_dim as u32);
    push_u32(&mut buf, arch.hidden.len() as u32);
    for &h in &arch.hidden {
        push_u32(&mut buf, h as u32);
    }
    push_u32(&mut buf, arch.heads.len() as u32);
    for &h in &arch.heads {
        push_u32(&mut buf, h as u32);
    }
    push_u32(&mut buf, d as u32);
    for &v in params.theta() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a policy file written by [`save_policy`]. Theta comes back with
/// 32-bit precision.
pub fn load_policy(path: &Path) -> Result<(PolicyArchitecture, PolicyParams)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(Error::input(format!("truncated policy file {}", path.display())));
        }
        let s = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };
    let magic = take(&mut cursor, 4)?;
    if magic != POLICY_MAGIC {
        return Err(Error::input(format!("{} is not a policy file", path.display())));
    }
    let read_u32 = |cursor: &mut usize| -> Result<u32> {
        let s = take(cursor, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };
    let version = read_u32(&mut cursor)?;
    if version != POLICY_FORMAT_VERSION {
        return Err(Error::input(format!("unsupported policy format version {version}")));
    }
    let input_dim = read_u32(&mut cursor)? as usize;
    let n_hidden = read_u32(&mut cursor)? as usize;
    if n_hidden > 64 {
        return Err(Error::input("implausible hidden layer count"));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(read_u32(&mut cursor)? as usize);
    }
    let n_heads = read_u32(&mut cursor)? as usize;
    if n_heads > 64 {
        return Err(Error::input("implausible head count"));
    }
    let mut heads = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        heads.push(read_u32(&mut cursor)? as usize);
    }
    let d = read_u32(&mut cursor)? as usize;
    let arch = PolicyArchitecture { input_dim, hidden, heads };
    arch.validate()?;
    if d != param_count(&arch) {
        return Err(Error::input(format!(
            "policy file declares d = {d} but the architecture implies {}",
            param_count(&arch)
        )));
    }
    let mut theta = Vec::with_capacity(d);
    for _ in 0..d {
        let s = take(&mut cursor, 4)?;
        let v = f32::from_le_bytes([s[0], s[1], s[2], s[3]]);
        if v.is_nan() {
            return Err(Error::input("policy file contains NaN parameters"));
        }
        theta.push(v as f64);
    }
    if cursor != bytes.len() {
        return Err(Error::input("trailing bytes after policy parameters"));
    }
    let params = PolicyParams::new(&arch, theta)?;
    Ok((arch, params))
}
