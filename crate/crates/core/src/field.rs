//! The uncertainty-aware radiance field.
//!
//! A trunk MLP over encoded positions feeds three heads:
//!
//! * density head — `sigma` (softplus),
//! * radiance head — trunk features concatenated with encoded view
//!   direction, `c` in `[0,1]^3` (sigmoid),
//! * uncertainty head — trunk features concatenated with a warping
//!   embedding row and a per-image embedding row, emitting the
//!   uncertainty density `sigma_u`, additive uncertain color `c_u`
//!   (both softplus) and the per-point uncertainty `mu_u`
//!   (`beta_min + softplus`).
//!
//! The radiance head never reads the embeddings, so the scene model is
//! image-independent by construction. The warping-embedding table has
//! exactly two rows: one shared by seen views and warped pseudo-views,
//! one for predicted pseudo-views.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{sigmoid, softplus, Activation, AdamState, DenseLayout};
use crate::seed;

/// Provenance class of a training view; selects the warping-embedding row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Seen views and warped pseudo-views share a row.
    SeenOrWarped,
    /// Predicted pseudo-views.
    Predicted,
}

impl Provenance {
    #[inline]
    pub fn omega_row(self) -> usize {
        match self {
            Provenance::SeenOrWarped => 0,
            Provenance::Predicted => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Encoded position feature length.
    pub pos_dim: usize,
    /// Encoded direction feature length.
    pub dir_dim: usize,
    pub trunk_depth: usize,
    pub trunk_width: usize,
    /// Hidden width of the color and uncertainty heads.
    pub head_width: usize,
    pub dim_omega: usize,
    pub dim_phi: usize,
    /// Rows of the per-image embedding table (seen + pseudo views).
    pub n_images: usize,
    /// Floor on the per-point uncertainty, keeps the NLL log term finite.
    pub beta_min: f64,
    pub hidden: Activation,
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_depth < 2 {
            return Err(CoreError::Config("trunk_depth must be >= 2".into()));
        }
        if self.trunk_width == 0
            || self.head_width == 0
            || self.dim_omega == 0
            || self.dim_phi == 0
            || self.pos_dim == 0
            || self.dir_dim == 0
        {
            return Err(CoreError::Config("field dimensions must be >= 1".into()));
        }
        if self.n_images == 0 {
            return Err(CoreError::Config("field needs at least one image row".into()));
        }
        if self.beta_min <= 0.0 {
            return Err(CoreError::Config("beta_min must be positive".into()));
        }
        Ok(())
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub trunk: Vec<DenseLayout>,
    pub sigma_head: DenseLayout,
    pub color_hidden: DenseLayout,
    pub color_out: DenseLayout,
    pub uncert_hidden: DenseLayout,
    pub uncert_out: DenseLayout,
    pub omega_off: usize,
    pub phi_off: usize,
    pub len: usize,
}

impl FieldLayout {
    pub fn new(cfg: &FieldConfig) -> Self {
        let mut next = 0;
        let mut trunk = Vec::with_capacity(cfg.trunk_depth);
        trunk.push(DenseLayout::reserve(&mut next, cfg.trunk_width, cfg.pos_dim));
        for _ in 1..cfg.trunk_depth {
            trunk.push(DenseLayout::reserve(&mut next, cfg.trunk_width, cfg.trunk_width));
        }
        let sigma_head = DenseLayout::reserve(&mut next, 1, cfg.trunk_width);
        let color_hidden =
            DenseLayout::reserve(&mut next, cfg.head_width, cfg.trunk_width + cfg.dir_dim);
        let color_out = DenseLayout::reserve(&mut next, 3, cfg.head_width);
        let uncert_hidden = DenseLayout::reserve(
            &mut next,
            cfg.head_width,
            cfg.trunk_width + cfg.dim_omega + cfg.dim_phi,
        );
        let uncert_out = DenseLayout::reserve(&mut next, 5, cfg.head_width);
        let omega_off = next;
        next += 2 * cfg.dim_omega;
        let phi_off = next;
        next += cfg.n_images * cfg.dim_phi;
        Self {
            trunk,
            sigma_head,
            color_hidden,
            color_out,
            uncert_hidden,
            uncert_out,
            omega_off,
            phi_off,
            len: next,
        }
    }
}

/// Model parameters: MLP weights plus both embedding tables, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub cfg: FieldConfig,
    pub layout: FieldLayout,
    pub data: Vec<f64>,
}

/// Shape-congruent gradient accumulator.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub data: Vec<f64>,
}

impl GradientTape {
    pub fn new(params: &FieldParams) -> Self {
        Self { data: vec![0.0; params.data.len()] }
    }

    pub fn zero(&mut self) {
        self.data.fill(0.0);
    }

    /// Fixed-order merge of a worker tape; keeps reductions deterministic.
    pub fn merge(&mut self, other: &GradientTape) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.data {
            *g *= s;
        }
    }
}

/// Per-point field outputs, range constraints enforced by the output
/// nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub color: [f64; 3],
    pub sigma_u: f64,
    pub color_u: [f64; 3],
    pub mu_u: f64,
}

impl FieldOutput {
    pub const ZERO: FieldOutput = FieldOutput {
        sigma: 0.0,
        color: [0.0; 3],
        sigma_u: 0.0,
        color_u: [0.0; 3],
        mu_u: 0.0,
    };
}

/// Upstream gradients on a [`FieldOutput`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FieldOutputGrad {
    pub d_sigma: f64,
    pub d_color: [f64; 3],
    pub d_sigma_u: f64,
    pub d_color_u: [f64; 3],
    pub d_mu_u: f64,
}

/// Deterministic init: fan-in-scaled uniform weights, zero biases,
/// small-uniform embedding rows. Equal seeds give bit-identical bytes.
pub fn init_params(cfg: &FieldConfig, seed_value: u64) -> Result<FieldParams> {
    cfg.validate()?;
    let layout = FieldLayout::new(cfg);
    let mut data = vec![0.0; layout.len];
    let mut rng = seed::rng(seed::derive(seed_value, &[seed::tag("field-init")]));
    for l in layout
        .trunk
        .iter()
        .chain([
            &layout.sigma_head,
            &layout.color_hidden,
            &layout.color_out,
            &layout.uncert_hidden,
            &layout.uncert_out,
        ])
    {
        l.init(&mut data, &mut rng);
    }
    use rand::Rng;
    for v in &mut data[layout.omega_off..] {
        *v = rng.gen_range(-0.1..0.1);
    }
    Ok(FieldParams { cfg: cfg.clone(), layout, data })
}

/// Cached activations from one forward evaluation, reused across samples.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pos_feat: Vec<f64>,
    trunk_pres: Vec<Vec<f64>>,
    trunk_acts: Vec<Vec<f64>>,
    sigma_pre: f64,
    color_in: Vec<f64>,
    color_hidden_pre: Vec<f64>,
    color_hidden_act: Vec<f64>,
    color_pre: [f64; 3],
    uncert_in: Vec<f64>,
    uncert_hidden_pre: Vec<f64>,
    uncert_hidden_act: Vec<f64>,
    uncert_pre: [f64; 5],
    omega_row: usize,
    phi_row: usize,
    has_uncertainty: bool,
    populated: bool,
}

/// Scratch buffers for one backward pass.
#[derive(Debug, Clone, Default)]
pub struct BackwardScratch {
    d_trunk_feat: Vec<f64>,
    dx_head: Vec<f64>,
    d_hidden: Vec<f64>,
    d_in: Vec<f64>,
    d_layer: Vec<f64>,
}

fn hidden_forward(act: Activation, pre: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(pre.iter().map(|&p| act.apply(p)));
}

/// Full forward pass, caching everything needed for [`backward`].
pub fn forward(
    params: &FieldParams,
    pos_feat: &[f64],
    dir_feat: &[f64],
    provenance: Provenance,
    phi_id: usize,
    cache: &mut ForwardCache,
) -> Result<FieldOutput> {
    if phi_id >= params.cfg.n_images {
        return Err(CoreError::PhiOutOfRange { phi_id, table_len: params.cfg.n_images });
    }
    let mut out = forward_radiance(params, pos_feat, dir_feat, cache)?;

    let cfg = &params.cfg;
    let layout = &params.layout;
    let trunk_feat = cache.trunk_acts.last().unwrap();
    cache.uncert_in.clear();
    cache.uncert_in.extend_from_slice(trunk_feat);
    let omega_row = provenance.omega_row();
    let omega_start = layout.omega_off + omega_row * cfg.dim_omega;
    cache
        .uncert_in
        .extend_from_slice(&params.data[omega_start..omega_start + cfg.dim_omega]);
    let phi_start = layout.phi_off + phi_id * cfg.dim_phi;
    cache
        .uncert_in
        .extend_from_slice(&params.data[phi_start..phi_start + cfg.dim_phi]);

    cache.uncert_hidden_pre.resize(cfg.head_width, 0.0);
    layout.uncert_hidden.forward(&params.data, &cache.uncert_in, &mut cache.uncert_hidden_pre);
    hidden_forward(cfg.hidden, &cache.uncert_hidden_pre, &mut cache.uncert_hidden_act);
    let mut upre = [0.0; 5];
    layout.uncert_out.forward(&params.data, &cache.uncert_hidden_act, &mut upre);
    cache.uncert_pre = upre;
    cache.omega_row = omega_row;
    cache.phi_row = phi_id;
    cache.has_uncertainty = true;

    out.sigma_u = softplus(upre[0]);
    out.color_u = [softplus(upre[1]), softplus(upre[2]), softplus(upre[3])];
    out.mu_u = cfg.beta_min + softplus(upre[4]);
    Ok(out)
}

/// Radiance-only forward pass (density + color); the uncertainty branch
/// and both embedding tables are never touched. Used for evaluation-time
/// rendering and depth prediction.
pub fn forward_radiance(
    params: &FieldParams,
    pos_feat: &[f64],
    dir_feat: &[f64],
    cache: &mut ForwardCache,
) -> Result<FieldOutput> {
    let cfg = &params.cfg;
    let layout = &params.layout;
    if pos_feat.len() != cfg.pos_dim || dir_feat.len() != cfg.dir_dim {
        return Err(CoreError::Domain(format!(
            "feature length mismatch: got pos {} dir {}, expected {} / {}",
            pos_feat.len(),
            dir_feat.len(),
            cfg.pos_dim,
            cfg.dir_dim
        )));
    }

    cache.pos_feat.clear();
    cache.pos_feat.extend_from_slice(pos_feat);
    cache.trunk_pres.resize(cfg.trunk_depth, Vec::new());
    cache.trunk_acts.resize(cfg.trunk_depth, Vec::new());

    for (i, layer) in layout.trunk.iter().enumerate() {
        cache.trunk_pres[i].resize(cfg.trunk_width, 0.0);
        if i == 0 {
            layer.forward(&params.data, pos_feat, &mut cache.trunk_pres[i]);
        } else {
            let (acts, pres) = (&cache.trunk_acts, &mut cache.trunk_pres);
            layer.forward(&params.data, &acts[i - 1], &mut pres[i]);
        }
        let (pres, acts) = (&cache.trunk_pres, &mut cache.trunk_acts);
        hidden_forward(cfg.hidden, &pres[i], &mut acts[i]);
    }
    let trunk_feat = cache.trunk_acts.last().unwrap();

    let mut sig_pre = [0.0];
    layout.sigma_head.forward(&params.data, trunk_feat, &mut sig_pre);
    cache.sigma_pre = sig_pre[0];

    cache.color_in.clear();
    cache.color_in.extend_from_slice(trunk_feat);
    cache.color_in.extend_from_slice(dir_feat);
    cache.color_hidden_pre.resize(cfg.head_width, 0.0);
    layout.color_hidden.forward(&params.data, &cache.color_in, &mut cache.color_hidden_pre);
    hidden_forward(cfg.hidden, &cache.color_hidden_pre, &mut cache.color_hidden_act);
    let mut c_pre = [0.0; 3];
    layout.color_out.forward(&params.data, &cache.color_hidden_act, &mut c_pre);
    cache.color_pre = c_pre;
    cache.has_uncertainty = false;
    cache.populated = true;

    Ok(FieldOutput {
        sigma: softplus(sig_pre[0]),
        color: [sigmoid(c_pre[0]), sigmoid(c_pre[1]), sigmoid(c_pre[2])],
        sigma_u: 0.0,
        color_u: [0.0; 3],
        mu_u: cfg.beta_min,
    })
}

/// Convenience single-point evaluation.
pub fn evaluate(
    params: &FieldParams,
    pos_feat: &[f64],
    dir_feat: &[f64],
    provenance: Provenance,
    phi_id: usize,
) -> Result<FieldOutput> {
    let mut cache = ForwardCache::default();
    forward(params, pos_feat, dir_feat, provenance, phi_id, &mut cache)
}

/// Reverse-mode accumulation of upstream output gradients into `tape`,
/// including the embedding rows touched by the forward pass.
pub fn backward(
    params: &FieldParams,
    cache: &ForwardCache,
    upstream: &FieldOutputGrad,
    tape: &mut GradientTape,
    scratch: &mut BackwardScratch,
) -> Result<()> {
    if !cache.populated {
        return Err(CoreError::Domain("backward called without a cached forward pass".into()));
    }
    let cfg = &params.cfg;
    let layout = &params.layout;
    let width = cfg.trunk_width;

    scratch.d_trunk_feat.clear();
    scratch.d_trunk_feat.resize(width, 0.0);

    // Density head.
    let d_sig_pre = [upstream.d_sigma * sigmoid(cache.sigma_pre)];
    scratch.dx_head.resize(width, 0.0);
    layout.sigma_head.backward(
        &params.data,
        cache.trunk_acts.last().unwrap(),
        &d_sig_pre,
        &mut tape.data,
        Some(&mut scratch.dx_head),
    );
    for (acc, d) in scratch.d_trunk_feat.iter_mut().zip(&scratch.dx_head) {
        *acc += d;
    }

    // Radiance head.
    let mut d_c_pre = [0.0; 3];
    for ch in 0..3 {
        let s = sigmoid(cache.color_pre[ch]);
        d_c_pre[ch] = upstream.d_color[ch] * s * (1.0 - s);
    }
    scratch.d_hidden.resize(cfg.head_width, 0.0);
    layout.color_out.backward(
        &params.data,
        &cache.color_hidden_act,
        &d_c_pre,
        &mut tape.data,
        Some(&mut scratch.d_hidden),
    );
    for (g, pre) in scratch.d_hidden.iter_mut().zip(&cache.color_hidden_pre) {
        *g *= cfg.hidden.grad(*pre);
    }
    scratch.d_in.resize(width + cfg.dir_dim, 0.0);
    layout.color_hidden.backward(
        &params.data,
        &cache.color_in,
        &scratch.d_hidden,
        &mut tape.data,
        Some(&mut scratch.d_in),
    );
    for (acc, d) in scratch.d_trunk_feat.iter_mut().zip(&scratch.d_in[..width]) {
        *acc += d;
    }

    // Uncertainty head, only when the forward pass ran it.
    if cache.has_uncertainty {
        let up = &cache.uncert_pre;
        let d_u_pre = [
            upstream.d_sigma_u * sigmoid(up[0]),
            upstream.d_color_u[0] * sigmoid(up[1]),
            upstream.d_color_u[1] * sigmoid(up[2]),
            upstream.d_color_u[2] * sigmoid(up[3]),
            upstream.d_mu_u * sigmoid(up[4]),
        ];
        scratch.d_hidden.resize(cfg.head_width, 0.0);
        layout.uncert_out.backward(
            &params.data,
            &cache.uncert_hidden_act,
            &d_u_pre,
            &mut tape.data,
            Some(&mut scratch.d_hidden),
        );
        for (g, pre) in scratch.d_hidden.iter_mut().zip(&cache.uncert_hidden_pre) {
            *g *= cfg.hidden.grad(*pre);
        }
        scratch.d_in.resize(width + cfg.dim_omega + cfg.dim_phi, 0.0);
        layout.uncert_hidden.backward(
            &params.data,
            &cache.uncert_in,
            &scratch.d_hidden,
            &mut tape.data,
            Some(&mut scratch.d_in),
        );
        for (acc, d) in scratch.d_trunk_feat.iter_mut().zip(&scratch.d_in[..width]) {
            *acc += d;
        }
        let omega_start = layout.omega_off + cache.omega_row * cfg.dim_omega;
        for j in 0..cfg.dim_omega {
            tape.data[omega_start + j] += scratch.d_in[width + j];
        }
        let phi_start = layout.phi_off + cache.phi_row * cfg.dim_phi;
        for j in 0..cfg.dim_phi {
            tape.data[phi_start + j] += scratch.d_in[width + cfg.dim_omega + j];
        }
    }

    // Trunk.
    let depth = cfg.trunk_depth;
    let mut grad = std::mem::take(&mut scratch.d_trunk_feat);
    for i in (0..depth).rev() {
        for (g, pre) in grad.iter_mut().zip(&cache.trunk_pres[i]) {
            *g *= cfg.hidden.grad(*pre);
        }
        let input: &[f64] =
            if i == 0 { &cache.pos_feat } else { &cache.trunk_acts[i - 1] };
        if i == 0 {
            layout.trunk[0].backward(&params.data, input, &grad, &mut tape.data, None);
        } else {
            scratch.d_layer.resize(width, 0.0);
            layout.trunk[i].backward(
                &params.data,
                input,
                &grad,
                &mut tape.data,
                Some(&mut scratch.d_layer),
            );
            std::mem::swap(&mut grad, &mut scratch.d_layer);
        }
    }
    scratch.d_trunk_feat = grad;
    Ok(())
}

/// Adam update over the flat parameter vector; deterministic.
pub fn adam_step(
    params: &mut FieldParams,
    tape: &GradientTape,
    state: &mut AdamState,
    cfg: &crate::nn::AdamConfig,
) {
    state.step(cfg, &mut params.data, &tape.data);
}

const CKPT_MAGIC: &[u8; 4] = b"RFLD";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    cfg: FieldConfig,
    n_params: usize,
    has_optimizer: bool,
    adam_t: u64,
}

/// Write config + parameters (+ optimizer moments) to a versioned binary
/// file; loading restores every byte of the parameter vector exactly.
pub fn save_checkpoint(
    path: &Path,
    params: &FieldParams,
    optimizer: Option<&AdamState>,
) -> Result<()> {
    let header = CheckpointHeader {
        cfg: params.cfg.clone(),
        n_params: params.data.len(),
        has_optimizer: optimizer.is_some(),
        adam_t: optimizer.map_or(0, |s| s.t),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CoreError::Checkpoint(format!("header encode: {e}")))?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&CKPT_VERSION.to_le_bytes())?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    for v in &params.data {
        f.write_all(&v.to_le_bytes())?;
    }
    if let Some(st) = optimizer {
        for v in st.m.iter().chain(&st.v) {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(FieldParams, Option<AdamState>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: String| CoreError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[0..4] != CKPT_MAGIC {
        return Err(bad("not a field checkpoint".into()));
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != CKPT_VERSION {
        return Err(bad("unsupported checkpoint version".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(bad("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| bad(format!("header decode: {e}")))?;
    let layout = FieldLayout::new(&header.cfg);
    if layout.len != header.n_params {
        return Err(bad("parameter count does not match config".into()));
    }
    let mut off = 16 + hlen;
    let need = header.n_params * 8 * if header.has_optimizer { 3 } else { 1 };
    if bytes.len() != off + need {
        return Err(bad("truncated parameter payload".into()));
    }
    let mut read_vec = |n: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        v
    };
    let data = read_vec(header.n_params);
    let optimizer = header.has_optimizer.then(|| AdamState {
        m: read_vec(header.n_params),
        v: read_vec(header.n_params),
        t: header.adam_t,
    });
    Ok((FieldParams { cfg: header.cfg, layout, data }, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny_cfg(n_images: usize) -> FieldConfig {
        FieldConfig {
            pos_dim: 9,
            dir_dim: 5,
            trunk_depth: 2,
            trunk_width: 8,
            head_width: 8,
            dim_omega: 3,
            dim_phi: 3,
            n_images,
            beta_min: 0.01,
            hidden: Activation::Tanh,
        }
    }

    fn random_feats(rng: &mut impl Rng, cfg: &FieldConfig) -> (Vec<f64>, Vec<f64>) {
        let pos = (0..cfg.pos_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dir = (0..cfg.dir_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (pos, dir)
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_cfg(4);
        let a = init_params(&cfg, 5).unwrap();
        let b = init_params(&cfg, 5).unwrap();
        let c = init_params(&cfg, 6).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn radiance_head_ignores_embeddings() {
        let cfg = tiny_cfg(6);
        let params = init_params(&cfg, 1).unwrap();
        let mut rng = seed::rng(2);
        for _ in 0..200 {
            let (pos, dir) = random_feats(&mut rng, &cfg);
            let a = evaluate(&params, &pos, &dir, Provenance::SeenOrWarped, 0).unwrap();
            let b = evaluate(&params, &pos, &dir, Provenance::Predicted, 5).unwrap();
            assert_eq!(a.sigma, b.sigma);
            assert_eq!(a.color, b.color);
        }
    }

    #[test]
    fn outputs_respect_ranges_under_fuzz() {
        let cfg = tiny_cfg(3);
        let mut rng = seed::rng(9);
        for trial in 0..200 {
            let mut params = init_params(&cfg, trial).unwrap();
            // Inflate some parameters to stress the nonlinearities.
            for v in params.data.iter_mut() {
                if rng.gen_bool(0.1) {
                    *v *= rng.gen_range(-50.0..50.0);
                }
            }
            let (pos, dir) = random_feats(&mut rng, &cfg);
            let out =
                evaluate(&params, &pos, &dir, Provenance::Predicted, rng.gen_range(0..3)).unwrap();
            assert!(out.sigma.is_finite() && out.sigma >= 0.0);
            assert!(out.sigma_u.is_finite() && out.sigma_u >= 0.0);
            assert!(out.mu_u.is_finite() && out.mu_u >= cfg.beta_min);
            for ch in 0..3 {
                assert!((0.0..=1.0).contains(&out.color[ch]));
                assert!(out.color_u[ch] >= 0.0 && out.color_u[ch].is_finite());
            }
        }
    }

    #[test]
    fn phi_out_of_range_is_an_error() {
        let cfg = tiny_cfg(2);
        let params = init_params(&cfg, 0).unwrap();
        let pos = vec![0.1; cfg.pos_dim];
        let dir = vec![0.2; cfg.dir_dim];
        assert!(matches!(
            evaluate(&params, &pos, &dir, Provenance::SeenOrWarped, 2),
            Err(CoreError::PhiOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_upstream_accumulates_nothing() {
        let cfg = tiny_cfg(2);
        let params = init_params(&cfg, 0).unwrap();
        let pos = vec![0.3; cfg.pos_dim];
        let dir = vec![-0.2; cfg.dir_dim];
        let mut cache = ForwardCache::default();
        forward(&params, &pos, &dir, Provenance::SeenOrWarped, 1, &mut cache).unwrap();
        let mut tape = GradientTape::new(&params);
        let mut scratch = BackwardScratch::default();
        backward(&params, &cache, &FieldOutputGrad::default(), &mut tape, &mut scratch).unwrap();
        assert!(tape.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_requires_cached_forward() {
        let cfg = tiny_cfg(2);
        let params = init_params(&cfg, 0).unwrap();
        let cache = ForwardCache::default();
        let mut tape = GradientTape::new(&params);
        let mut scratch = BackwardScratch::default();
        assert!(backward(&params, &cache, &FieldOutputGrad::default(), &mut tape, &mut scratch)
            .is_err());
    }

    /// Central finite differences over every parameter of a width-8 net,
    /// with a random linear functional of the outputs as the objective.
    #[test]
    fn backward_matches_finite_differences_on_every_parameter() {
        let cfg = tiny_cfg(3);
        let mut params = init_params(&cfg, 12).unwrap();
        let mut rng = seed::rng(100);
        let (pos, dir) = random_feats(&mut rng, &cfg);
        let up = FieldOutputGrad {
            d_sigma: rng.gen_range(-1.0..1.0),
            d_color: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            d_sigma_u: rng.gen_range(-1.0..1.0),
            d_color_u: [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ],
            d_mu_u: rng.gen_range(-1.0..1.0),
        };
        let objective = |p: &FieldParams| -> f64 {
            let out = evaluate(p, &pos, &dir, Provenance::Predicted, 2).unwrap();
            up.d_sigma * out.sigma
                + up.d_color.iter().zip(&out.color).map(|(a, b)| a * b).sum::<f64>()
                + up.d_sigma_u * out.sigma_u
                + up.d_color_u.iter().zip(&out.color_u).map(|(a, b)| a * b).sum::<f64>()
                + up.d_mu_u * out.mu_u
        };

        let mut cache = ForwardCache::default();
        forward(&params, &pos, &dir, Provenance::Predicted, 2, &mut cache).unwrap();
        let mut tape = GradientTape::new(&params);
        let mut scratch = BackwardScratch::default();
        backward(&params, &cache, &up, &mut tape, &mut scratch).unwrap();

        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..params.data.len() {
            let orig = params.data[i];
            params.data[i] = orig + h;
            let fp = objective(&params);
            params.data[i] = orig - h;
            let fm = objective(&params);
            params.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(tape.data[i].abs()).max(1e-6);
            worst = worst.max(((fd - tape.data[i]) / denom).abs());
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        use tempfile::tempdir;
        let cfg = tiny_cfg(4);
        let params = init_params(&cfg, 77).unwrap();
        let mut st = AdamState::new(params.data.len());
        let tape = GradientTape { data: vec![0.125; params.data.len()] };
        let mut p2 = params.clone();
        adam_step(&mut p2, &tape, &mut st, &crate::nn::AdamConfig::default());

        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &p2, Some(&st)).unwrap();
        let (loaded, opt) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.data, p2.data);
        assert_eq!(loaded.cfg, p2.cfg);
        let opt = opt.unwrap();
        assert_eq!(opt.m, st.m);
        assert_eq!(opt.v, st.v);
        assert_eq!(opt.t, st.t);
    }
}
