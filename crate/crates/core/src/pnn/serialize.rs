use crate::error::{Error, Result};
use crate::io::{WeightsFile, WeightsManifest};
use crate::linops::{AdjointPolicy, ConvStack};
use crate::prox::BoxConstraint;

use super::{learned_scalars, ArchKind, PnnLayerParams, PnnModel, VariantKind};

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Packs kernels as `layer{k}.D` (and `layer{k}.P` for LFO) blobs; scalars
/// go into the manifest, rounded to f32 like the blobs.
pub fn to_weights_file(model: &PnnModel) -> Result<WeightsFile> {
    let mut m = WeightsManifest::new(
        "weights",
        &model.arch.to_string(),
        &model.variant.to_string(),
        model.depth(),
        model.features,
        model.channels,
    );
    m.bounds = [model.bounds.lo, model.bounds.hi];
    m.a = model.a;
    m.norm_shape = Some([model.norm_shape.0, model.norm_shape.1]);
    if !model.log_mu.is_empty() {
        m.scalars.insert(
            "log_mu".into(),
            model.log_mu.iter().map(|&v| v as f32 as f64).collect(),
        );
    }
    let mut w = WeightsFile::new(m);
    let (j, c) = (model.features, model.channels);
    for (k, l) in model.layers.iter().enumerate() {
        w.push(
            format!("layer{k}.D"),
            vec![j, c, 3, 3],
            to_f32(l.d.kernels()),
        )?;
        if let AdjointPolicy::Untied(p) = &l.adjoint {
            w.push(format!("layer{k}.P"), vec![c, j, 3, 3], to_f32(p.kernels()))?;
        }
    }
    Ok(w)
}

pub fn from_weights_file(w: &WeightsFile) -> Result<PnnModel> {
    let m = &w.manifest;
    let fmt = |msg: String| Error::Format(format!("weights: {msg}"));
    if m.kind != "weights" {
        return Err(fmt(format!("kind {:?} is not a weights file", m.kind)));
    }
    let arch: ArchKind = m.arch.parse().map_err(fmt)?;
    let variant: VariantKind = m.variant.parse().map_err(fmt)?;
    let (k, j, c) = (m.layers, m.features, m.channels);
    if k == 0 || j == 0 || c == 0 {
        return Err(fmt(format!("K = {k}, J = {j}, C = {c} must be positive")));
    }
    let layer_blobs = m.tensors.iter().filter(|t| t.name.ends_with(".D")).count();
    if layer_blobs != k {
        return Err(fmt(format!(
            "manifest K = {k} but {layer_blobs} layer blobs"
        )));
    }
    let per_layer = if variant == VariantKind::Lfo { 2 } else { 1 };
    if m.tensors.len() != per_layer * k {
        return Err(fmt(format!(
            "{} tensors for {k} {variant} layers (expected {})",
            m.tensors.len(),
            per_layer * k
        )));
    }
    let layers = (0..k)
        .map(|i| {
            let d = ConvStack::new(
                j,
                c,
                to_f64(w.expect(&format!("layer{i}.D"), &[j, c, 3, 3])?),
            )?;
            let adjoint = match variant {
                VariantKind::Lno => AdjointPolicy::Tied,
                VariantKind::Lfo => AdjointPolicy::Untied(ConvStack::new(
                    c,
                    j,
                    to_f64(w.expect(&format!("layer{i}.P"), &[c, j, 3, 3])?),
                )?),
            };
            PnnLayerParams::new(d, adjoint)
        })
        .collect::<Result<Vec<_>>>()?;
    let log_mu = m.scalars.get("log_mu").cloned().unwrap_or_default();
    if log_mu.len() != learned_scalars(arch, variant, k) || m.scalars.keys().any(|s| s != "log_mu")
    {
        return Err(fmt(format!("scalar set does not match {arch}-{variant}")));
    }
    let norm_shape = m
        .norm_shape
        .ok_or_else(|| fmt("missing norm_shape".into()))?;
    let mut model = PnnModel::from_layers(
        arch,
        variant,
        layers,
        log_mu,
        (norm_shape[0], norm_shape[1]),
    )
    .map_err(|e| fmt(e.to_string()))?;
    model.bounds = BoxConstraint::new(m.bounds[0], m.bounds[1]).map_err(|e| fmt(e.to_string()))?;
    if !(m.a > 2.0) {
        return Err(fmt(format!("inertia parameter a = {} must be > 2", m.a)));
    }
    model.a = m.a;
    Ok(model)
}

pub fn serialize_weights(model: &PnnModel) -> Result<Vec<u8>> {
    Ok(to_weights_file(model)?.to_bytes())
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<PnnModel> {
    from_weights_file(&WeightsFile::from_bytes(bytes)?)
}

impl PnnModel {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        to_weights_file(self)?.write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        from_weights_file(&WeightsFile::read(path)?)
    }
}
