//! Multi-scale GLOW: squeeze, K steps of (actnorm, 1x1 conv, affine
//! coupling), split; repeated over L levels with no split after the last.

use serde::{Deserialize, Serialize};

use crate::bijections::{
    make_mask, split_channels, merge_channels, ActNorm, AffineCoupling, Bijection, Chain,
    InvConv1x1, LayerRecord, MaskScheme, MaskSpec, Squeeze,
};
use crate::dist::standard_normal_log_prob;
use crate::error::{Error, Result};
use crate::model::{check_temperature, FlowModel, ModelKind};
use crate::module::Module;
use crate::rng::{derive_seed, normal_vec, rng_for};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlowConfig {
    pub levels: usize,
    pub flows_per_level: usize,
    pub hidden_channels: usize,
    pub mask_scheme: MaskScheme,
    #[serde(default = "one")]
    pub cycle_iterations: usize,
    pub image_shape: [usize; 3],
}

fn one() -> usize {
    1
}

impl Default for GlowConfig {
    fn default() -> Self {
        GlowConfig {
            levels: 3,
            flows_per_level: 32,
            hidden_channels: 256,
            mask_scheme: MaskScheme::ChannelWise,
            cycle_iterations: 1,
            image_shape: [3, 64, 64],
        }
    }
}

impl GlowConfig {
    pub fn new(image_shape: [usize; 3], levels: usize, flows_per_level: usize, hidden: usize) -> Self {
        GlowConfig {
            levels,
            flows_per_level,
            hidden_channels: hidden,
            image_shape,
            ..GlowConfig::default()
        }
    }

    pub fn with_mask(mut self, scheme: MaskScheme) -> Self {
        self.mask_scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.image_shape;
        if self.levels == 0 || self.flows_per_level == 0 || self.hidden_channels == 0 || c == 0 {
            return Err(Error::InvalidArgument(
                "levels, flows_per_level, hidden_channels and channels must be positive".into(),
            ));
        }
        let f = 1usize
            .checked_shl(self.levels as u32)
            .ok_or_else(|| Error::InvalidArgument("too many levels".into()))?;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::InvalidArgument(format!(
                "image extent {h}x{w} must be divisible by 2^levels = {f}"
            )));
        }
        Ok(())
    }

    /// `(C, H, W)` entering level `l`.
    pub fn level_input(&self, l: usize) -> [usize; 3] {
        let [c, h, w] = self.image_shape;
        [c << l, h >> l, w >> l]
    }

    /// Shapes of the latents in scoring order: one per split, then the last.
    pub fn latent_shapes(&self) -> Vec<[usize; 3]> {
        (0..self.levels)
            .map(|l| {
                let [c, h, w] = self.level_input(l);
                let sq = [c * 4, h / 2, w / 2];
                if l + 1 < self.levels {
                    [sq[0] / 2, sq[1], sq[2]]
                } else {
                    sq
                }
            })
            .collect()
    }
}

struct Level {
    flows: Chain,
    /// Checkerboard levels run their flows before squeezing.
    flows_first: bool,
    split: bool,
}

crate::impl_module!(Level { flows });

pub struct GlowModel {
    config: GlowConfig,
    levels: Vec<Level>,
}

impl Module for GlowModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.levels.iter().enumerate() {
            l.visit(&crate::module::join(prefix, &format!("level{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.levels.iter_mut().enumerate() {
            l.visit_mut(&crate::module::join(prefix, &format!("level{i}")), f);
        }
    }
}

/// Latents and per-layer log-dets of one normalizing pass.
pub struct GlowTrace {
    pub latents: Vec<Tensor>,
    pub records: Vec<LayerRecord>,
    pub logdet: Tensor,
    pub log_density: Tensor,
}

impl GlowModel {
    pub fn new(config: GlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut levels = Vec::with_capacity(config.levels);
        for l in 0..config.levels {
            let flows_first = config.mask_scheme == MaskScheme::Checkerboard;
            let [c, h, w] = config.level_input(l);
            let shape = if flows_first { [c, h, w] } else { [c * 4, h / 2, w / 2] };
            let mut flows = Chain::default();
            for k in 0..config.flows_per_level {
                let s = derive_seed(seed, &[l as u64, k as u64]);
                let spec = MaskSpec {
                    scheme: config.mask_scheme,
                    cycle_iterations: config.cycle_iterations,
                    layer_index: k,
                };
                flows.push(ActNorm::new(shape[0]));
                flows.push(InvConv1x1::random(shape[0], s));
                flows.push(AffineCoupling::new(
                    make_mask(&spec, &shape)?,
                    shape[0],
                    0,
                    config.hidden_channels,
                    derive_seed(s, &[1]),
                )?);
            }
            levels.push(Level {
                flows,
                flows_first,
                split: l + 1 < config.levels,
            });
        }
        Ok(GlowModel { config, levels })
    }

    pub fn config(&self) -> &GlowConfig {
        &self.config
    }

    /// Shared normalizing pass; `flows(i, h)` applies level `i`'s chain.
    fn walk(
        image_shape: [usize; 3],
        layout: &[(bool, bool)],
        x: &Tensor,
        mut flows: impl FnMut(usize, &Tensor) -> Result<(Tensor, Tensor)>,
        mut records: Option<&mut Vec<LayerRecord>>,
    ) -> Result<GlowTrace> {
        let [c, hh, ww] = image_shape;
        if !matches!(*x.shape(), [n, xc, xh, xw] if n > 0 && (xc, xh, xw) == (c, hh, ww)) {
            return Err(Error::ShapeMismatch {
                op: "glow input",
                lhs: x.shape().to_vec(),
                rhs: image_shape.to_vec(),
            });
        }
        let n = x.shape()[0];
        let mut h = x.clone();
        let mut logdet = Tensor::zeros(&[n]);
        let mut latents = Vec::new();
        for (i, &(flows_first, split)) in layout.iter().enumerate() {
            if !flows_first {
                h = Squeeze::squeeze(&h)?;
            }
            let (y, ld) = flows(i, &h)?;
            logdet = logdet.add(&ld)?;
            h = if flows_first { Squeeze::squeeze(&y)? } else { y };
            if let Some(r) = records.as_deref_mut() {
                r.push(LayerRecord {
                    name: format!("level{i}.squeeze"),
                    output: h.clone(),
                    logdet: Tensor::zeros(&[n]),
                });
            }
            if split {
                let (kept, factored) = split_channels(&h)?;
                latents.push(factored);
                h = kept;
            }
        }
        latents.push(h);
        let mut log_density = logdet.clone();
        for z in &latents {
            log_density = log_density.add(&standard_normal_log_prob(z)?)?;
        }
        Ok(GlowTrace {
            latents,
            records: Vec::new(),
            logdet,
            log_density,
        })
    }

    /// Normalizing pass keeping every intermediate output and log-det.
    pub fn trace(&self, x: &Tensor) -> Result<GlowTrace> {
        let mut records = Vec::new();
        let mut flow_records = Vec::new();
        let mut t = Self::walk(
            self.config.image_shape,
            &self.layout(),
            x,
            |i, h| {
                let (y, ld, r) = self.levels[i].flows.forward_traced(h, None, &format!("level{i}."))?;
                flow_records.push(r);
                Ok((y, ld))
            },
            Some(&mut records),
        )?;
        // interleave each level's flow records before its squeeze record
        for (level_records, squeeze) in flow_records.into_iter().zip(records) {
            t.records.extend(level_records);
            t.records.push(squeeze);
        }
        Ok(t)
    }

    /// Latents in the order of [`GlowConfig::latent_shapes`].
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.forward_pass(x)?.latents)
    }

    fn forward_pass(&self, x: &Tensor) -> Result<GlowTrace> {
        Self::walk(
            self.config.image_shape,
            &self.layout(),
            x,
            |i, h| self.levels[i].flows.forward(h, None),
            None,
        )
    }

    fn layout(&self) -> Vec<(bool, bool)> {
        self.levels.iter().map(|l| (l.flows_first, l.split)).collect()
    }

    pub fn decode(&self, latents: &[Tensor]) -> Result<Tensor> {
        if latents.len() != self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} latents, got {}",
                self.levels.len(),
                latents.len()
            )));
        }
        let mut h = latents[latents.len() - 1].clone();
        for (i, level) in self.levels.iter().enumerate().rev() {
            if level.split {
                h = merge_channels(&h, &latents[i])?;
            }
            if level.flows_first {
                h = Squeeze::unsqueeze(&h)?;
                h = level.flows.inverse(&h, None)?;
            } else {
                h = level.flows.inverse(&h, None)?;
                h = Squeeze::unsqueeze(&h)?;
            }
        }
        Ok(h)
    }

    /// Standard normal latents scaled by `temperature`.
    pub fn sample_latents(&self, n: usize, temperature: f64, seed: u64) -> Result<Vec<Tensor>> {
        check_temperature(temperature)?;
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let mut rng = rng_for(seed, &[0x5a3]);
        self.config
            .latent_shapes()
            .iter()
            .map(|&[c, h, w]| {
                let z = normal_vec(&mut rng, n * c * h * w);
                Tensor::new(z.into_iter().map(|v| v * temperature).collect(), &[n, c, h, w])
            })
            .collect()
    }
}

impl FlowModel for GlowModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Glow
    }

    fn image_shape(&self) -> [usize; 3] {
        self.config.image_shape
    }

    fn log_density(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_pass(x)?.log_density)
    }

    fn initialize(&mut self, x: &Tensor) -> Result<()> {
        let layout = self.layout();
        let levels = &mut self.levels;
        Self::walk(
            self.config.image_shape,
            &layout,
            &x.detach(),
            |i, h| levels[i].flows.forward_init(h, None),
            None,
        )
        .map(|_| ())
    }

    fn sample(&self, n: usize, temperature: f64, seed: u64) -> Result<Tensor> {
        let z = self.sample_latents(n, temperature, seed)?;
        Ok(self.decode(&z)?.shift(0.5))
    }

    fn first_non_finite(&self, x: &Tensor) -> Option<String> {
        let t = self.trace(x).ok()?;
        t.records
            .iter()
            .find(|r| !r.output.all_finite() || !r.logdet.all_finite())
            .map(|r| r.name.clone())
    }
}
