//! Likelihood-based out-of-distribution evaluation: per-image scores,
//! ROC analysis, noise perturbation, per-level sweeps and average PSD.
//!
//! Scores follow the convention "higher log-likelihood means more
//! in-distribution"; the ROC positive class is in-distribution.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::Dataset;
use crate::dist::{bits_per_dims, dequantize_per_sample};
use crate::error::{Error, Result};
use crate::model::FlowModel;
use crate::rng::{derive_seed, rng_for};
use crate::train::eval_seed;
use crate::waveletflow::WaveletFlowModel;

const NOISE_STREAM: u64 = 0x9015e;
const SCORE_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub split: String,
    pub nll_nats: f64,
    pub bpd: f64,
}

impl ScoreRecord {
    /// Log-likelihood in nats; larger is more in-distribution.
    pub fn score(&self) -> f64 {
        -self.nll_nats
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Noise {
    Multiplicative(f64),
    Additive(f64),
}

impl Noise {
    pub fn sigma(self) -> f64 {
        match self {
            Noise::Multiplicative(s) | Noise::Additive(s) => s,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

fn gaussian(sigma: f64, n: usize, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = rng_for(seed, &[NOISE_STREAM]);
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// `x (1 + e)` with `e ~ N(0, sigma^2)` per element, clamped to `[0, 1]`.
pub fn perturb_multiplicative(img: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(img.to_vec());
    }
    let eps = gaussian(sigma, img.len(), seed);
    Ok(img.iter().zip(eps).map(|(x, e)| (x * (1.0 + e)).clamp(0.0, 1.0)).collect())
}

/// `x + e` with `e ~ N(0, sigma^2)` per element, clamped to `[0, 1]`.
pub fn perturb_additive(img: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(img.to_vec());
    }
    let eps = gaussian(sigma, img.len(), seed);
    Ok(img.iter().zip(eps).map(|(x, e)| (x + e).clamp(0.0, 1.0)).collect())
}

/// Applies `noise` to every image in the `[0, 1]` scale and requantizes
/// to 8 bits. Image `i` uses its own seed, so results do not depend on
/// dataset order or batching.
pub fn perturb_dataset(data: &Dataset, noise: Noise, seed: u64) -> Result<Dataset> {
    check_sigma(noise.sigma())?;
    if noise.sigma() == 0.0 {
        return Ok(data.clone());
    }
    let mut pixels = Vec::with_capacity(data.len() * data.shape().iter().product::<usize>());
    for i in 0..data.len() {
        let img: Vec<f64> = data.image(i).iter().map(|&p| p as f64 / 255.0).collect();
        let s = derive_seed(seed, &[NOISE_STREAM, i as u64]);
        let out = match noise {
            Noise::Multiplicative(sigma) => perturb_multiplicative(&img, sigma, s)?,
            Noise::Additive(sigma) => perturb_additive(&img, sigma, s)?,
        };
        pixels.extend(out.iter().map(|v| (v * 255.0).round() as u8));
    }
    Dataset::new(data.shape(), data.ids().to_vec(), pixels)
}

fn chunked<T: Send>(
    n: usize,
    f: impl Fn(&[usize]) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let idx: Vec<usize> = (0..n).collect();
    let chunks: Vec<&[usize]> = idx.chunks(SCORE_CHUNK).collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Vec<T>>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(|c| f(c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Vec<T>>> = chunks.iter().map(|c| f(c)).collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn dequantized(data: &Dataset, idx: &[usize], seed: u64) -> Result<crate::Tensor> {
    let seeds: Vec<u64> = idx.iter().map(|&i| eval_seed(seed, i)).collect();
    Ok(dequantize_per_sample(&data.batch(idx), &seeds)?.0)
}

/// One record per image, in dataset order.
pub fn score_dataset(
    model: &dyn FlowModel,
    data: &Dataset,
    split: &str,
    seed: u64,
) -> Result<Vec<ScoreRecord>> {
    if data.shape() != model.image_shape() {
        return Err(Error::InvalidShape(format!(
            "images are {:?}, model expects {:?}",
            data.shape(),
            model.image_shape()
        )));
    }
    let dims: usize = data.shape().iter().product();
    let ll = chunked(data.len(), |idx| {
        Ok(model.log_likelihood(&dequantized(data, idx, seed)?)?.to_vec())
    })?;
    Ok(ll
        .into_iter()
        .zip(data.ids())
        .map(|(l, id)| ScoreRecord {
            id: id.clone(),
            split: split.to_string(),
            nll_nats: -l,
            bpd: bits_per_dims(l, dims),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC of "score >= threshold means in-distribution", sweeping every
/// distinct score from high to low. The first point has threshold `+inf`.
/// Tied scores move both rates at once, giving diagonal segments, so the
/// trapezoid area equals `P(in > out) + P(in = out) / 2`.
pub fn roc_auc(scores_in: &[f64], scores_out: &[f64]) -> Result<Roc> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::InvalidArgument("ROC needs nonempty score lists".into()));
    }
    if scores_in.iter().chain(scores_out).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("ROC scores must not be NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_in
        .iter()
        .map(|&s| (s, true))
        .chain(scores_out.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, n) = (scores_in.len() as f64, scores_out.len() as f64);
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area in units of one (positive, negative) pair
    let mut area2 = 0u128;
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) as u128) * ((tp + tp0) as u128);
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
        });
    }
    let auc = area2 as f64 / (2.0 * p * n);
    Ok(Roc { points, auc })
}

/// Per-level BPD of one Wavelet Flow for one noise setting.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelScores {
    pub sigma: f64,
    /// `bpd[level][image]`, levels `0..=n` with `n` the base term.
    pub bpd: Vec<Vec<f64>>,
}

/// Per-level BPD of every image, with dequantization seeded per image.
pub fn per_level_scores(model: &WaveletFlowModel, data: &Dataset, seed: u64) -> Result<Vec<Vec<f64>>> {
    if data.shape() != model.image_shape() {
        return Err(Error::InvalidShape(format!(
            "images are {:?}, model expects {:?}",
            data.shape(),
            model.image_shape()
        )));
    }
    let n = model.n_levels();
    let counts: Vec<usize> = (0..=n).map(|l| model.config().coefficient_count(l)).collect();
    let rows = chunked(data.len(), |idx| {
        let terms = model.all_level_log_likelihoods(&dequantized(data, idx, seed)?)?;
        Ok((0..idx.len())
            .map(|k| {
                terms
                    .iter()
                    .zip(&counts)
                    .map(|(t, &c)| bits_per_dims(t.data()[k], c))
                    .collect::<Vec<f64>>()
            })
            .collect())
    })?;
    Ok((0..=n).map(|l| rows.iter().map(|r| r[l]).collect()).collect())
}

/// Per-level scores for each multiplicative noise level in `sigmas`.
pub fn per_level_sweep(
    model: &WaveletFlowModel,
    data: &Dataset,
    sigmas: &[f64],
    seed: u64,
) -> Result<Vec<LevelScores>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let noisy = perturb_dataset(data, Noise::Multiplicative(sigma), seed)?;
            Ok(LevelScores { sigma, bpd: per_level_scores(model, &noisy, seed)? })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRow {
    pub level: usize,
    pub sigma: f64,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Histograms with `bins` equal-width bins per level, sharing one range
/// across all noise settings of that level.
pub fn level_histograms(sweep: &[LevelScores], bins: usize) -> Result<Vec<HistogramRow>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let levels = sweep.first().map_or(0, |s| s.bpd.len());
    let mut rows = Vec::new();
    for level in 0..levels {
        let values = sweep.iter().flat_map(|s| s.bpd[level].iter().copied());
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NonFinite { layer: format!("level{level} scores") });
        }
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        for s in sweep {
            let mut counts = vec![0usize; bins];
            for &v in &s.bpd[level] {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            for (b, count) in counts.into_iter().enumerate() {
                rows.push(HistogramRow {
                    level,
                    sigma: s.sigma,
                    bin_left: lo + b as f64 * width,
                    bin_right: lo + (b + 1) as f64 * width,
                    count,
                });
            }
        }
    }
    Ok(rows)
}

/// Radially averaged power spectrum of an image set.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdCurve {
    /// Mean power at integer radius `r`, averaged over frequencies in the
    /// bin and over images.
    pub mean_power: Vec<f64>,
    /// Number of frequencies in each bin.
    pub bin_sizes: Vec<usize>,
    /// Radii `N / 2^(k+1)` separating wavelet levels.
    pub level_boundaries: Vec<f64>,
}

impl PsdCurve {
    /// Total power per image; equals the mean image energy.
    pub fn total_power(&self) -> f64 {
        self.mean_power
            .iter()
            .zip(&self.bin_sizes)
            .map(|(p, &c)| p * c as f64)
            .sum()
    }
}

/// Luminance (channel mean) in `[0, 1]` of image `i`, row-major.
pub fn luminance(data: &Dataset, i: usize) -> Vec<f64> {
    let [c, h, w] = data.shape();
    let img = data.image(i);
    (0..h * w)
        .map(|p| (0..c).map(|k| img[k * h * w + p] as f64).sum::<f64>() / (c as f64 * 255.0))
        .collect()
}

/// Power `|F|^2` of the orthonormal 2D DFT of a row-major `n x n` image.
pub fn power_spectrum(img: &[f64], n: usize) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = img.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
    let norm = (n * n) as f64;
    buf.iter().map(|c| c.norm_sqr() / norm).collect()
}

fn radius_of(k: usize, n: usize) -> f64 {
    let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    f.abs()
}

/// Set-averaged radial PSD of square images.
pub fn average_psd(data: &Dataset) -> Result<PsdCurve> {
    let [_, h, w] = data.shape();
    if h != w {
        return Err(Error::InvalidShape(format!("PSD needs square images, got {h}x{w}")));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("PSD of an empty dataset".into()));
    }
    let n = h;
    let bin: Vec<usize> = (0..n * n)
        .map(|p| {
            let (y, x) = (p / n, p % n);
            radius_of(y, n).hypot(radius_of(x, n)).round() as usize
        })
        .collect();
    let nbins = bin.iter().max().copied().unwrap_or(0) + 1;
    let mut sizes = vec![0usize; nbins];
    for &b in &bin {
        sizes[b] += 1;
    }
    let spectra = chunked(data.len(), |idx| {
        Ok(idx.iter().map(|&i| power_spectrum(&luminance(data, i), n)).collect())
    })?;
    let mut sums = vec![0.0; nbins];
    for s in &spectra {
        for (p, &b) in s.iter().zip(&bin) {
            sums[b] += p;
        }
    }
    let m = data.len() as f64;
    let mean_power = sums.iter().zip(&sizes).map(|(s, &c)| s / (m * c as f64)).collect();
    let mut level_boundaries = Vec::new();
    let mut r = n / 2;
    while r >= 1 {
        level_boundaries.push(r as f64);
        r /= 2;
    }
    Ok(PsdCurve { mean_power, bin_sizes: sizes, level_boundaries })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn scores_csv(records: &[ScoreRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["id", "split", "nll_nats", "bpd"]);
    for r in records {
        let _ = w.write_record([
            r.id.clone(),
            r.split.clone(),
            r.nll_nats.to_string(),
            r.bpd.to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).expect("CSV of UTF-8 fields")
}

pub fn write_scores_csv(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    write_text(path, &scores_csv(records))
}

/// Parses `scores.csv`; errors name the offending line.
pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let bad = |line: u64, msg: String| Error::format("scores CSV", format!("line {line}: {msg}"));
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "split", "nll_nats", "bpd"] {
        return Err(bad(1, format!("expected header id,split,nll_nats,bpd, got {:?}", header.as_slice())));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(bad(line, format!("expected 4 fields, got {}", rec.len())));
        }
        let num = |i: usize, what: &str| {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(line, format!("{what} {:?} is not a number", &rec[i])))
        };
        out.push(ScoreRecord {
            id: rec[0].to_string(),
            split: rec[1].to_string(),
            nll_nats: num(2, "nll_nats")?,
            bpd: num(3, "bpd")?,
        });
    }
    Ok(out)
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores_csv(&text).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format("scores CSV", format!("{}: {detail}", path.display())),
        other => other,
    })
}

pub fn roc_csv(roc: &Roc) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    let _ = writeln!(out, "# auc={}", roc.auc);
    out
}

pub fn write_roc_csv(path: &Path, roc: &Roc) -> Result<()> {
    write_text(path, &roc_csv(roc))
}

pub fn levels_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("level,sigma,bin_left,bin_right,count\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.level, r.sigma, r.bin_left, r.bin_right, r.count);
    }
    out
}

pub fn write_levels_csv(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    write_text(path, &levels_csv(rows))
}

pub fn psd_csv(psd: &PsdCurve) -> String {
    let mut out = String::from("radius,mean_power\n");
    for (r, p) in psd.mean_power.iter().enumerate() {
        let _ = writeln!(out, "{r},{p}");
    }
    for b in &psd.level_boundaries {
        let _ = writeln!(out, "# level_boundary={b}");
    }
    out
}

pub fn write_psd_csv(path: &Path, psd: &PsdCurve) -> Result<()> {
    write_text(path, &psd_csv(psd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.2, 0.1]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().auc, 0.5);
        let r = roc_auc(&[3.0, 2.0, 1.0], &[2.5, 0.5]).unwrap();
        assert!((r.auc - 4.0 / 6.0).abs() < 1e-15);
        let last = r.points.last().unwrap();
        assert_eq!((r.points[0].fpr, r.points[0].tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(roc_auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn perturbation_edge_cases() {
        let img = vec![0.0, 0.25, 1.0];
        assert_eq!(perturb_multiplicative(&img, 0.0, 1).unwrap(), img);
        let z = perturb_multiplicative(&[0.0; 5], 0.3, 4).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(perturb_multiplicative(&img, -1.0, 1).is_err());
        let a = perturb_additive(&img, 0.5, 2).unwrap();
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn multiplicative_noise_is_mean_preserving() {
        let v = perturb_multiplicative(&vec![0.5; 100_000], 0.1, 7).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.005);
    }

    #[test]
    fn constant_images_have_dc_only() {
        let data = Dataset::new([1, 8, 8], vec!["a".into(), "b".into()], vec![128; 128]).unwrap();
        let psd = average_psd(&data).unwrap();
        let dc = (128.0f64 / 255.0).powi(2) * 64.0;
        assert!((psd.mean_power[0] - dc).abs() < 1e-9);
        assert!(psd.mean_power[1..].iter().all(|p| p.abs() < 1e-20));
        assert_eq!(psd.level_boundaries, vec![4.0, 2.0, 1.0]);
    }

    #[test]
    fn scores_csv_round_trip() {
        let recs = vec![ScoreRecord { id: "a,b.png".into(), split: "train".into(), nll_nats: 1.25, bpd: 0.1 }];
        assert_eq!(parse_scores_csv(&scores_csv(&recs)).unwrap(), recs);
        let err = parse_scores_csv("id,split,nll_nats,bpd\na,b,c,d\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
