//! Wavelet Flow: a base flow over the `1 x 1` low-pass `I_0` and, for every
//! pyramid level `i`, a conditional flow over the details `D_i` given the
//! low-pass `I_i`. The image log-likelihood is the sum of the level terms.
//!
//! Level indices `0..n` name the detail levels; index `n` names the base
//! term. Each term carries the dequantization correction of the
//! coefficients it scores, so the per-level terms add up to the
//! pixel-space log-likelihood exactly.

use serde::{Deserialize, Serialize};

use crate::bijections::{ActNorm, AffineCoupling, Bijection, Chain, InvConv1x1, Partition};
use crate::dist::{bits_per_dims, dequantization_correction, standard_normal_log_prob};
use crate::error::{Error, Result};
use crate::haar::{synthesize, HaarPyramid};
use crate::model::{check_temperature, FlowModel, ModelKind};
use crate::module::{join, Module};
use crate::rng::{derive_seed, normal_vec, rng_for};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletFlowConfig {
    pub image_shape: [usize; 3],
    pub flows_per_level: usize,
    pub base_flows: usize,
    pub hidden_channels: usize,
}

impl Default for WaveletFlowConfig {
    fn default() -> Self {
        WaveletFlowConfig {
            image_shape: [3, 32, 32],
            flows_per_level: 4,
            base_flows: 4,
            hidden_channels: 64,
        }
    }
}

impl WaveletFlowConfig {
    pub fn new(image_shape: [usize; 3], flows_per_level: usize, hidden: usize) -> Self {
        WaveletFlowConfig {
            image_shape,
            flows_per_level,
            base_flows: flows_per_level,
            hidden_channels: hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.image_shape;
        if c == 0 || self.flows_per_level == 0 || self.base_flows == 0 || self.hidden_channels == 0 {
            return Err(Error::InvalidArgument("wavelet flow sizes must be positive".into()));
        }
        if h != w || h < 2 || !h.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "wavelet flow needs square power-of-two images of extent >= 2, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Number of detail levels `n` (the image is `2^n` wide).
    pub fn levels(&self) -> usize {
        self.image_shape[1].trailing_zeros() as usize
    }

    /// Coefficients scored by level `level` (`n` = base term).
    pub fn coefficient_count(&self, level: usize) -> usize {
        let c = self.image_shape[0];
        if level == self.levels() {
            c
        } else {
            (3 * c) << (2 * level)
        }
    }
}

pub struct WaveletFlowModel {
    config: WaveletFlowConfig,
    base: Chain,
    levels: Vec<Chain>,
}

/// Module prefix of a level's parameters in checkpoints.
pub fn level_prefix(level: usize, n_levels: usize) -> String {
    if level == n_levels {
        "base".to_string()
    } else {
        format!("level{level}")
    }
}

impl Module for WaveletFlowModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.levels.iter().enumerate() {
            l.visit(&join(prefix, &format!("level{i}")), f);
        }
        self.base.visit(&join(prefix, "base"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.levels.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("level{i}")), f);
        }
        self.base.visit_mut(&join(prefix, "base"), f);
    }
}

impl WaveletFlowModel {
    pub fn new(config: WaveletFlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.image_shape[0];
        let n = config.levels();
        let mut base = Chain::default();
        for k in 0..config.base_flows {
            let s = derive_seed(seed, &[n as u64, k as u64]);
            base.push(ActNorm::new(c));
            base.push(InvConv1x1::random(c, s));
            if c >= 2 {
                base.push(AffineCoupling::new(
                    Partition::halves(c, k)?,
                    c,
                    0,
                    config.hidden_channels,
                    derive_seed(s, &[1]),
                )?);
            }
        }
        let mut levels = Vec::with_capacity(n);
        for i in 0..n {
            let mut chain = Chain::default();
            for k in 0..config.flows_per_level {
                let s = derive_seed(seed, &[i as u64, k as u64]);
                chain.push(ActNorm::new(3 * c));
                chain.push(InvConv1x1::random(3 * c, s));
                chain.push(AffineCoupling::new(
                    Partition::halves(3 * c, k)?,
                    3 * c,
                    c,
                    config.hidden_channels,
                    derive_seed(s, &[1]),
                )?);
            }
            levels.push(chain);
        }
        Ok(WaveletFlowModel { config, base, levels })
    }

    pub fn config(&self) -> &WaveletFlowConfig {
        &self.config
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.n_levels() {
            Err(Error::OutOfRange(format!(
                "level {level} outside 0..={}",
                self.n_levels()
            )))
        } else {
            Ok(())
        }
    }

    pub fn pyramid(&self, x: &Tensor) -> Result<HaarPyramid> {
        self.check_input(x)?;
        HaarPyramid::build(x)
    }

    /// Low-pass `I_i` rescaled to pixel magnitude for use as context.
    fn context(&self, low: &Tensor, level: usize) -> Tensor {
        low.scale(0.5f64.powi((self.n_levels() - level) as i32))
    }

    fn chain(&self, level: usize) -> &Chain {
        if level == self.n_levels() {
            &self.base
        } else {
            &self.levels[level]
        }
    }

    fn chain_mut(&mut self, level: usize) -> &mut Chain {
        if level == self.n_levels() {
            &mut self.base
        } else {
            &mut self.levels[level]
        }
    }

    /// `(input, context)` that level `level`'s flow sees.
    fn level_io(&self, pyr: &HaarPyramid, level: usize) -> (Tensor, Option<Tensor>) {
        if level == self.n_levels() {
            (pyr.lows[0].clone(), None)
        } else {
            (pyr.details[level].clone(), Some(self.context(&pyr.lows[level], level)))
        }
    }

    /// Continuous log density of level `level`'s coefficients, `[N]`.
    pub fn level_log_density(&self, pyr: &HaarPyramid, level: usize) -> Result<Tensor> {
        self.check_level(level)?;
        let (input, ctx) = self.level_io(pyr, level);
        let (z, ld) = self.chain(level).forward(&input, ctx.as_ref())?;
        standard_normal_log_prob(&z)?.add(&ld)
    }

    /// Level term of the discrete log-likelihood, `[N]`.
    pub fn level_log_likelihood_from(&self, pyr: &HaarPyramid, level: usize) -> Result<Tensor> {
        let share = dequantization_correction(self.config.coefficient_count(level));
        Ok(self.level_log_density(pyr, level)?.shift(share))
    }

    pub fn per_level_log_likelihood(&self, x: &Tensor, level: usize) -> Result<Tensor> {
        self.level_log_likelihood_from(&self.pyramid(x)?, level)
    }

    /// Every level term, indexed `0..=n` with `n` the base term.
    pub fn all_level_log_likelihoods(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let pyr = self.pyramid(x)?;
        (0..=self.n_levels())
            .map(|l| self.level_log_likelihood_from(&pyr, l))
            .collect()
    }

    /// Per-sample bits per coefficient of one level.
    pub fn level_bpd(&self, x: &Tensor, level: usize) -> Result<Vec<f64>> {
        let count = self.config.coefficient_count(level);
        Ok(self
            .per_level_log_likelihood(x, level)?
            .data()
            .iter()
            .map(|&ll| bits_per_dims(ll, count))
            .collect())
    }

    /// Latents indexed like the levels: `0..n` details, `n` base.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let pyr = self.pyramid(x)?;
        (0..=self.n_levels())
            .map(|l| {
                let (input, ctx) = self.level_io(&pyr, l);
                Ok(self.chain(l).forward(&input, ctx.as_ref())?.0)
            })
            .collect()
    }

    pub fn decode(&self, latents: &[Tensor]) -> Result<Tensor> {
        let n = self.n_levels();
        if latents.len() != n + 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} latents, got {}",
                n + 1,
                latents.len()
            )));
        }
        let mut low = self.base.inverse(&latents[n], None)?;
        for (i, flow) in self.levels.iter().enumerate() {
            let detail = flow.inverse(&latents[i], Some(&self.context(&low, i)))?;
            low = synthesize(&low, &detail)?;
        }
        Ok(low)
    }

    pub fn latent_shapes(&self) -> Vec<[usize; 3]> {
        let c = self.config.image_shape[0];
        let mut v: Vec<[usize; 3]> = (0..self.n_levels()).map(|i| [3 * c, 1 << i, 1 << i]).collect();
        v.push([c, 1, 1]);
        v
    }

    /// Data-dependent initialization of a single level.
    pub fn initialize_level(&mut self, x: &Tensor, level: usize) -> Result<()> {
        self.check_level(level)?;
        let pyr = self.pyramid(&x.detach())?;
        let (input, ctx) = self.level_io(&pyr, level);
        self.chain_mut(level).forward_init(&input, ctx.as_ref()).map(|_| ())
    }

    /// Checkpoint prefix of level `level`.
    pub fn prefix(&self, level: usize) -> String {
        level_prefix(level, self.n_levels())
    }
}

impl FlowModel for WaveletFlowModel {
    fn kind(&self) -> ModelKind {
        ModelKind::WaveletFlow
    }

    fn as_wavelet_flow(&self) -> Option<&WaveletFlowModel> {
        Some(self)
    }

    fn image_shape(&self) -> [usize; 3] {
        self.config.image_shape
    }

    fn log_density(&self, x: &Tensor) -> Result<Tensor> {
        let pyr = self.pyramid(x)?;
        let mut total = self.level_log_density(&pyr, self.n_levels())?;
        for l in 0..self.n_levels() {
            total = total.add(&self.level_log_density(&pyr, l)?)?;
        }
        Ok(total)
    }

    /// Sum of the level terms, so it decomposes exactly.
    fn log_likelihood(&self, x: &Tensor) -> Result<Tensor> {
        let pyr = self.pyramid(x)?;
        let n = self.n_levels();
        let mut total = self.level_log_likelihood_from(&pyr, n)?;
        for l in 0..n {
            total = total.add(&self.level_log_likelihood_from(&pyr, l)?)?;
        }
        Ok(total)
    }

    fn initialize(&mut self, x: &Tensor) -> Result<()> {
        for l in 0..=self.n_levels() {
            self.initialize_level(x, l)?;
        }
        Ok(())
    }

    fn sample(&self, n: usize, temperature: f64, seed: u64) -> Result<Tensor> {
        check_temperature(temperature)?;
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let mut rng = rng_for(seed, &[0x3a7]);
        let latents = self
            .latent_shapes()
            .iter()
            .map(|&[c, h, w]| {
                let z = normal_vec(&mut rng, n * c * h * w);
                Tensor::new(z.into_iter().map(|v| v * temperature).collect(), &[n, c, h, w])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.decode(&latents)?.shift(0.5))
    }

    fn trainable_levels(&self) -> usize {
        self.n_levels() + 1
    }

    fn scope_loss(&self, x: &Tensor, level: Option<usize>) -> Result<Tensor> {
        Ok(self.scope_log_likelihood(x, level)?.0.mean().neg())
    }

    fn scope_log_likelihood(&self, x: &Tensor, level: Option<usize>) -> Result<(Tensor, usize)> {
        match level {
            None => {
                let [c, h, w] = self.config.image_shape;
                Ok((self.log_likelihood(x)?, c * h * w))
            }
            Some(l) => Ok((
                self.per_level_log_likelihood(x, l)?,
                self.config.coefficient_count(l),
            )),
        }
    }

    fn scope_prefix(&self, level: Option<usize>) -> Result<Option<String>> {
        match level {
            None => Ok(None),
            Some(l) => {
                self.check_level(l)?;
                Ok(Some(format!("{}.", self.prefix(l))))
            }
        }
    }

    fn initialize_scope(&mut self, x: &Tensor, level: Option<usize>) -> Result<()> {
        match level {
            None => self.initialize(x),
            Some(l) => self.initialize_level(x, l),
        }
    }

    fn first_non_finite(&self, x: &Tensor) -> Option<String> {
        let pyr = self.pyramid(x).ok()?;
        for l in (0..=self.n_levels()).rev() {
            let (input, ctx) = self.level_io(&pyr, l);
            let (_, _, records) = self
                .chain(l)
                .forward_traced(&input, ctx.as_ref(), &format!("{}.", self.prefix(l)))
                .ok()?;
            if let Some(r) = records
                .iter()
                .find(|r| !r.output.all_finite() || !r.logdet.all_finite())
            {
                return Some(r.name.clone());
            }
        }
        None
    }
}
