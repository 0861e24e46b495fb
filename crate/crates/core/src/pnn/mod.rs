//! Unfolded proximal networks DDFB, DDiFB, DCP and DScCP built from the
//! dual-then-primal (Arrow–Hurwicz) block, in the learned-normalized (LNO)
//! and learned-flexible (LFO) parameterizations.

mod forward;
mod serialize;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linops::{spectral_norm, spectral_norm_from, AdjointPolicy, ConvStack, PowerConfig};
use crate::prox::BoxConstraint;
use crate::solvers::inertia_rho;
use crate::tensor::Tensor;

pub use forward::{
    dual_sublayer, pnn_forward, pnn_forward_with, primal_sublayer, ForwardOptions, ForwardOutput,
    LayerTape, Tape,
};
pub use serialize::{deserialize_weights, from_weights_file, serialize_weights, to_weights_file};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Ddfb,
    Ddifb,
    Dcp,
    Dsccp,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        ArchKind::Ddfb,
        ArchKind::Ddifb,
        ArchKind::Dcp,
        ArchKind::Dsccp,
    ];

    /// Dual forward-backward family (no primal prox weight).
    pub fn is_dual_fb(self) -> bool {
        matches!(self, ArchKind::Ddfb | ArchKind::Ddifb)
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Ddfb => "ddfb",
            ArchKind::Ddifb => "ddifb",
            ArchKind::Dcp => "dcp",
            ArchKind::Dsccp => "dsccp",
        })
    }
}

impl FromStr for ArchKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ddfb" => Ok(ArchKind::Ddfb),
            "ddifb" => Ok(ArchKind::Ddifb),
            "dcp" => Ok(ArchKind::Dcp),
            "dsccp" => Ok(ArchKind::Dsccp),
            _ => Err(format!(
                "unknown architecture {s:?} (expected ddfb, ddifb, dcp, dsccp)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VariantKind {
    /// Tied adjoints, step sizes from operator norms.
    Lno,
    /// Untied adjoints, step sizes absorbed into the kernels.
    Lfo,
}

impl VariantKind {
    pub const ALL: [VariantKind; 2] = [VariantKind::Lno, VariantKind::Lfo];
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantKind::Lno => "lno",
            VariantKind::Lfo => "lfo",
        })
    }
}

impl FromStr for VariantKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lno" => Ok(VariantKind::Lno),
            "lfo" => Ok(VariantKind::Lfo),
            _ => Err(format!("unknown variant {s:?} (expected lno, lfo)")),
        }
    }
}

/// Published scalar budget per architecture (added to the convolution
/// weights in [`param_count`]). DDiFB-LFO and DScCP-LFO include scalars
/// beyond the ones the model actually learns; see [`PnnModel::learnable_count`].
pub fn scalar_budget(arch: ArchKind, variant: VariantKind, layers: usize) -> usize {
    match (arch, variant) {
        (ArchKind::Ddfb, _) => 0,
        (ArchKind::Ddifb, VariantKind::Lno) => 0,
        (ArchKind::Ddifb, VariantKind::Lfo) => 1,
        (ArchKind::Dcp, _) => 1,
        (ArchKind::Dsccp, VariantKind::Lno) => layers,
        (ArchKind::Dsccp, VariantKind::Lfo) => 2 * layers,
    }
}

/// Parameter count: `K·J·C·9` kernel weights (twice for LFO) plus the
/// per-architecture scalar budget.
pub fn param_count(
    arch: ArchKind,
    variant: VariantKind,
    layers: usize,
    features: usize,
    channels: usize,
) -> usize {
    let conv = layers * features * channels * ConvStack::TAPS;
    let stacks = match variant {
        VariantKind::Lno => 1,
        VariantKind::Lfo => 2,
    };
    stacks * conv + scalar_budget(arch, variant, layers)
}

/// Number of learned `log μ` scalars.
pub fn learned_scalars(arch: ArchKind, variant: VariantKind, layers: usize) -> usize {
    match (arch, variant) {
        (ArchKind::Ddfb | ArchKind::Ddifb, _) => 0,
        (ArchKind::Dcp, _) => 1,
        (ArchKind::Dsccp, VariantKind::Lno) => layers,
        (ArchKind::Dsccp, VariantKind::Lfo) => 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnnLayerParams {
    /// Forward analysis stack `D_k` (`J×C×3×3`).
    pub d: ConvStack,
    pub adjoint: AdjointPolicy,
    /// Cached `‖D_k‖` on the model's norm shape (LNO only, else 0).
    pub norm: f64,
    /// Leading singular pair `(left, right)` with `D_k·right = norm·left`.
    pub singular: Option<(Tensor, Tensor)>,
}

impl PnnLayerParams {
    pub fn new(d: ConvStack, adjoint: AdjointPolicy) -> Result<Self> {
        adjoint.validate_for(&d)?;
        Ok(PnnLayerParams {
            d,
            adjoint,
            norm: 0.0,
            singular: None,
        })
    }

    pub fn apply_adjoint(&self, u: &Tensor) -> Result<Tensor> {
        self.adjoint.apply(&self.d, u)
    }
}

/// Per-layer step parameters after applying the parameterization rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerScalars {
    /// Multiplier of `D_k x` in the dual sublayer (`τ_k`, or 1 when absorbed).
    pub step: f64,
    /// Primal weight `μ_k`; `+∞` for the dual forward-backward family.
    pub mu: f64,
    /// Dual inertia `ρ_k` (DDiFB).
    pub rho: f64,
    /// Primal extrapolation (1 for DCP, `α_k` for DScCP, else 0).
    pub alpha: f64,
}

impl LayerScalars {
    /// `1/(1+μ)`, 0 for the `+∞` sentinel.
    pub fn weight(&self) -> f64 {
        if self.mu.is_infinite() {
            0.0
        } else {
            1.0 / (1.0 + self.mu)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnnModel {
    pub arch: ArchKind,
    pub variant: VariantKind,
    pub features: usize,
    pub channels: usize,
    pub layers: Vec<PnnLayerParams>,
    /// Learned `log μ` values: one shared (DCP), one `μ₀` (DScCP-LFO), or one
    /// per layer (DScCP-LNO).
    pub log_mu: Vec<f64>,
    /// DDiFB inertia parameter `a`.
    pub a: f64,
    pub bounds: BoxConstraint,
    /// Spatial size `(H, W)` on which LNO operator norms are computed.
    pub norm_shape: (usize, usize),
    pub norm_config: PowerConfig,
    /// Treat LNO norms as constants when differentiating.
    pub stop_norm_grad: bool,
}

impl PnnModel {
    /// Random initialization: kernels uniform in `±1/√(9·fan_in)`, `μ = 1`.
    pub fn new(
        arch: ArchKind,
        variant: VariantKind,
        layers: usize,
        features: usize,
        channels: usize,
        seed: u64,
        norm_shape: (usize, usize),
    ) -> Result<Self> {
        if layers == 0 || features == 0 || channels == 0 {
            return Err(Error::Parameter("K, J and C must be positive".into()));
        }
        let ls = (0..layers)
            .map(|k| {
                let d = ConvStack::random(features, channels, layer_seed(seed, k, 0));
                let adjoint = match variant {
                    VariantKind::Lno => AdjointPolicy::Tied,
                    VariantKind::Lfo => AdjointPolicy::Untied(ConvStack::random(
                        channels,
                        features,
                        layer_seed(seed, k, 1),
                    )),
                };
                PnnLayerParams::new(d, adjoint)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(
            arch,
            variant,
            ls,
            vec![0.0; learned_scalars(arch, variant, layers)],
            norm_shape,
        )
    }

    /// LNO model with the same stack `d` in every layer.
    pub fn tied(
        arch: ArchKind,
        d: &ConvStack,
        layers: usize,
        norm_shape: (usize, usize),
    ) -> Result<Self> {
        let ls = (0..layers)
            .map(|_| PnnLayerParams::new(d.clone(), AdjointPolicy::Tied))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(
            arch,
            VariantKind::Lno,
            ls,
            vec![0.0; learned_scalars(arch, VariantKind::Lno, layers)],
            norm_shape,
        )
    }

    pub fn from_layers(
        arch: ArchKind,
        variant: VariantKind,
        layers: Vec<PnnLayerParams>,
        log_mu: Vec<f64>,
        norm_shape: (usize, usize),
    ) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Parameter("model needs at least one layer".into()))?;
        let (features, channels) = (first.d.filters(), first.d.channels());
        for (k, l) in layers.iter().enumerate() {
            if l.d.filters() != features || l.d.channels() != channels {
                return Err(Error::Shape(format!(
                    "layer {k} stack shape differs from layer 0"
                )));
            }
            l.adjoint.validate_for(&l.d)?;
            if l.adjoint.is_tied() != (variant == VariantKind::Lno) {
                return Err(Error::Parameter(format!(
                    "layer {k}: {variant} needs a {} adjoint",
                    match variant {
                        VariantKind::Lno => "tied",
                        VariantKind::Lfo => "untied",
                    }
                )));
            }
        }
        let want = learned_scalars(arch, variant, layers.len());
        if log_mu.len() != want {
            return Err(Error::Parameter(format!(
                "{arch}-{variant} learns {want} log-mu scalars, got {}",
                log_mu.len()
            )));
        }
        if let Some(v) = log_mu.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite log-mu {v}")));
        }
        if norm_shape.0 == 0 || norm_shape.1 == 0 {
            return Err(Error::Parameter("norm shape must be positive".into()));
        }
        let mut m = PnnModel {
            arch,
            variant,
            features,
            channels,
            layers,
            log_mu,
            a: 3.0,
            bounds: BoxConstraint::default(),
            norm_shape,
            norm_config: PowerConfig::default(),
            stop_norm_grad: false,
        };
        m.refresh_norms()?;
        Ok(m)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Parameters this model actually learns.
    pub fn learnable_count(&self) -> usize {
        self.parameter_groups().iter().map(|g| g.1).sum()
    }

    /// Recomputes cached LNO norms, warm-starting from the previous leading
    /// vector; consecutive identical stacks share one computation.
    pub fn refresh_norms(&mut self) -> Result<()> {
        let all = vec![true; self.layers.len()];
        self.refresh_norms_where(&all)
    }

    fn refresh_norms_where(&mut self, dirty: &[bool]) -> Result<()> {
        if self.variant == VariantKind::Lfo {
            for l in &mut self.layers {
                l.norm = 0.0;
                l.singular = None;
            }
            return Ok(());
        }
        let dims = (self.channels, self.norm_shape.0, self.norm_shape.1);
        for k in (0..self.layers.len()).filter(|&k| dirty[k]) {
            if k > 0 && self.layers[k].d == self.layers[k - 1].d {
                let (n, s) = (self.layers[k - 1].norm, self.layers[k - 1].singular.clone());
                self.layers[k].norm = n;
                self.layers[k].singular = s;
                continue;
            }
            let cfg = PowerConfig {
                seed: self.norm_config.seed.wrapping_add(k as u64),
                ..self.norm_config
            };
            let layer = &self.layers[k];
            let res = match &layer.singular {
                Some((_, right)) if right.dims() == dims && right.norm() > 0.0 => {
                    spectral_norm_from(&layer.d, right.clone(), &cfg)?
                }
                _ => spectral_norm(&layer.d, dims, &cfg)?,
            };
            let layer = &mut self.layers[k];
            layer.norm = res.norm;
            layer.singular = (res.norm > 0.0).then_some((res.left, res.right));
        }
        Ok(())
    }

    /// Forces fresh (cold-start) norm computations.
    pub fn reset_norms(&mut self) -> Result<()> {
        for l in &mut self.layers {
            l.singular = None;
        }
        self.refresh_norms()
    }

    fn mu_values(&self) -> Vec<f64> {
        let k = self.layers.len();
        match (self.arch, self.variant) {
            (ArchKind::Ddfb | ArchKind::Ddifb, _) => vec![f64::INFINITY; k],
            (ArchKind::Dcp, _) => vec![self.log_mu[0].exp(); k],
            (ArchKind::Dsccp, VariantKind::Lno) => self.log_mu.iter().map(|l| l.exp()).collect(),
            (ArchKind::Dsccp, VariantKind::Lfo) => {
                let mut mu = self.log_mu[0].exp();
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    out.push(mu);
                    mu *= sccp_alpha(mu);
                }
                out
            }
        }
    }

    /// Step parameters of every layer.
    pub fn layer_scalars(&self) -> Result<Vec<LayerScalars>> {
        let mus = self.mu_values();
        self.layers
            .iter()
            .zip(mus)
            .enumerate()
            .map(|(k, (l, mu))| {
                let n2 = l.norm * l.norm;
                let step = match self.variant {
                    VariantKind::Lfo => 1.0,
                    VariantKind::Lno => {
                        if !(n2 > 0.0) {
                            return Err(Error::Precondition(format!(
                                "layer {k} has a zero operator norm"
                            )));
                        }
                        match self.arch {
                            ArchKind::Ddfb => 1.99 / n2,
                            ArchKind::Ddifb => 0.99 / n2,
                            ArchKind::Dcp | ArchKind::Dsccp => 0.99 / (mu * n2),
                        }
                    }
                };
                Ok(LayerScalars {
                    step,
                    mu,
                    rho: if self.arch == ArchKind::Ddifb {
                        inertia_rho(k + 1, self.a)
                    } else {
                        0.0
                    },
                    alpha: match self.arch {
                        ArchKind::Ddfb | ArchKind::Ddifb => 0.0,
                        ArchKind::Dcp => 1.0,
                        ArchKind::Dsccp => sccp_alpha(mu),
                    },
                })
            })
            .collect()
    }

    /// Names and sizes of the learnable groups, in [`PnnModel::parameters`] order.
    pub fn parameter_groups(&self) -> Vec<(String, usize)> {
        let mut g = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            g.push((format!("layer{k}.D"), l.d.kernels().len()));
            if let AdjointPolicy::Untied(p) = &l.adjoint {
                g.push((format!("layer{k}.P"), p.kernels().len()));
            }
        }
        if !self.log_mu.is_empty() {
            g.push(("log_mu".into(), self.log_mu.len()));
        }
        g
    }

    /// Flat parameter vector: per layer `D` then `P` (LFO), then `log μ`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.learnable_count());
        for l in &self.layers {
            v.extend_from_slice(l.d.kernels());
            if let AdjointPolicy::Untied(p) = &l.adjoint {
                v.extend_from_slice(p.kernels());
            }
        }
        v.extend_from_slice(&self.log_mu);
        v
    }

    /// Inverse of [`PnnModel::parameters`]; refreshes LNO norms.
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.learnable_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                values.len(),
                self.learnable_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter at index {i}")));
        }
        let mut it = values.iter().copied();
        let mut dirty = Vec::with_capacity(self.layers.len());
        for l in &mut self.layers {
            let mut changed = false;
            for k in l.d.kernels_mut() {
                let v = it.next().expect("length checked");
                changed |= v.to_bits() != k.to_bits();
                *k = v;
            }
            if let AdjointPolicy::Untied(p) = &mut l.adjoint {
                p.kernels_mut()
                    .iter_mut()
                    .for_each(|k| *k = it.next().expect("length checked"));
            }
            dirty.push(changed);
        }
        self.log_mu
            .iter_mut()
            .for_each(|m| *m = it.next().expect("length checked"));
        // a layer equal to a refreshed predecessor must follow it
        for k in 1..dirty.len() {
            if dirty[k - 1] && self.layers[k].d == self.layers[k - 1].d {
                dirty[k] = true;
            }
        }
        self.refresh_norms_where(&dirty)
    }
}

/// `α = (1 + 2μ)^{-1/2}`.
pub fn sccp_alpha(mu: f64) -> f64 {
    1.0 / (1.0 + 2.0 * mu).sqrt()
}

fn layer_seed(seed: u64, layer: usize, stack: u64) -> u64 {
    use rand::Rng as _;
    crate::rng::derive(seed, &[layer as u64, stack]).random()
}
