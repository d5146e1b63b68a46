use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScheme {
    ChannelWise,
    Checkerboard,
    Cycle,
}

impl fmt::Display for MaskScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskScheme::ChannelWise => "channel_wise",
            MaskScheme::Checkerboard => "checkerboard",
            MaskScheme::Cycle => "cycle",
        })
    }
}

impl FromStr for MaskScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "channel_wise" | "channelwise" | "channel" => Ok(MaskScheme::ChannelWise),
            "checkerboard" | "checker" => Ok(MaskScheme::Checkerboard),
            "cycle" | "cycle_1" => Ok(MaskScheme::Cycle),
            other => Err(Error::InvalidArgument(format!("unknown mask scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub scheme: MaskScheme,
    pub cycle_iterations: usize,
    pub layer_index: usize,
}

impl MaskSpec {
    pub fn new(scheme: MaskScheme, layer_index: usize) -> Self {
        MaskSpec {
            scheme,
            cycle_iterations: 1,
            layer_index,
        }
    }
}

/// How a coupling layer divides its input into the transformed set `A` and
/// the conditioning set `B`.
#[derive(Clone, Debug, PartialEq)]
pub enum Partition {
    /// Whole channels; `a` and `b` are disjoint and cover `0..C`.
    Channels { a: Vec<usize>, b: Vec<usize> },
    /// Pixels on an `h x w` grid, `mask[i * w + j] = 1` marking `A`.
    Spatial { mask: Vec<f64>, h: usize, w: usize },
}

impl Partition {
    /// Channel halves for any `c >= 2`, alternating roles by layer parity.
    /// For odd `c` the first block gets `floor(c / 2)` channels.
    pub fn halves(c: usize, layer: usize) -> Result<Partition> {
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "a channel partition needs at least 2 channels, got {c}"
            )));
        }
        let first: Vec<usize> = (0..c / 2).collect();
        let second: Vec<usize> = (c / 2..c).collect();
        Ok(if layer % 2 == 0 {
            Partition::Channels { a: first, b: second }
        } else {
            Partition::Channels { a: second, b: first }
        })
    }

    /// Transformed elements per sample for a `c`-channel input.
    pub fn transformed_count(&self, c: usize) -> usize {
        match self {
            Partition::Channels { a, .. } => a.len(),
            Partition::Spatial { mask, .. } => c * mask.iter().filter(|&&m| m != 0.0).count(),
        }
    }

    fn validate(&self) -> Result<()> {
        let empty = match self {
            Partition::Channels { a, b } => a.is_empty() || b.is_empty(),
            Partition::Spatial { mask, .. } => {
                mask.iter().all(|&m| m == 0.0) || mask.iter().all(|&m| m != 0.0)
            }
        };
        if empty {
            Err(Error::InvalidArgument("mask leaves A or B empty".into()))
        } else {
            Ok(())
        }
    }
}

/// Builds the partition for a `(C, H, W)` input.
pub fn make_mask(spec: &MaskSpec, shape: &[usize]) -> Result<Partition> {
    let &[c, h, w] = shape else {
        return Err(Error::InvalidShape(format!("make_mask expects (C, H, W), got {shape:?}")));
    };
    let p = match spec.scheme {
        MaskScheme::ChannelWise => {
            if c % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "channel-wise masking needs an even channel count, got {c}"
                )));
            }
            Partition::halves(c, spec.layer_index)?
        }
        MaskScheme::Checkerboard => {
            let mask = (0..h * w)
                .map(|k| ((k / w + k % w + spec.layer_index) % 2 == 0) as u8 as f64)
                .collect();
            Partition::Spatial { mask, h, w }
        }
        MaskScheme::Cycle => {
            if c < 2 {
                return Err(Error::InvalidArgument("cycle masking needs >= 2 channels".into()));
            }
            let offset = cycle_offset(c, spec.cycle_iterations, spec.layer_index);
            let a: Vec<usize> = (0..c / 2).map(|j| (offset + j) % c).collect();
            let b = (0..c).filter(|i| !a.contains(i)).collect();
            Partition::Channels { a, b }
        }
    };
    p.validate()?;
    Ok(p)
}

/// Start of the rotating `A` block: advances `c / (2 (k + 1))` channels per
/// layer, at least one.
pub fn cycle_offset(c: usize, iterations: usize, layer: usize) -> usize {
    let step = (c / (2 * (iterations + 1))).max(1);
    (layer * step) % c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channels(p: &Partition) -> (Vec<usize>, Vec<usize>) {
        match p {
            Partition::Channels { a, b } => (a.clone(), b.clone()),
            _ => panic!("expected channel partition"),
        }
    }

    #[test]
    fn channel_wise_alternates() {
        let l0 = make_mask(&MaskSpec::new(MaskScheme::ChannelWise, 0), &[4, 2, 2]).unwrap();
        assert_eq!(channels(&l0), (vec![0, 1], vec![2, 3]));
        let l1 = make_mask(&MaskSpec::new(MaskScheme::ChannelWise, 1), &[4, 2, 2]).unwrap();
        assert_eq!(channels(&l1), (vec![2, 3], vec![0, 1]));
    }

    #[test]
    fn odd_channels_rejected_for_channel_wise() {
        assert!(make_mask(&MaskSpec::new(MaskScheme::ChannelWise, 0), &[3, 2, 2]).is_err());
        assert!(Partition::halves(3, 0).is_ok());
    }

    #[test]
    fn checkerboard_layer_zero() {
        let p = make_mask(&MaskSpec::new(MaskScheme::Checkerboard, 0), &[1, 2, 2]).unwrap();
        assert_eq!(p, Partition::Spatial { mask: vec![1.0, 0.0, 0.0, 1.0], h: 2, w: 2 });
        let q = make_mask(&MaskSpec::new(MaskScheme::Checkerboard, 1), &[1, 2, 2]).unwrap();
        assert_eq!(q, Partition::Spatial { mask: vec![0.0, 1.0, 1.0, 0.0], h: 2, w: 2 });
    }

    #[test]
    fn checkerboard_single_pixel_rejected() {
        assert!(make_mask(&MaskSpec::new(MaskScheme::Checkerboard, 0), &[4, 1, 1]).is_err());
    }

    #[test]
    fn cycle_boundaries_rotate() {
        let mut starts: Vec<usize> = (0..4).map(|l| cycle_offset(4, 1, l)).collect();
        starts.sort();
        assert_eq!(starts, vec![0, 1, 2, 3]);
        let p = make_mask(&MaskSpec::new(MaskScheme::Cycle, 3), &[4, 1, 1]).unwrap();
        assert_eq!(channels(&p), (vec![3, 0], vec![1, 2]));
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("channel-wise".parse::<MaskScheme>().unwrap(), MaskScheme::ChannelWise);
        assert_eq!("checker".parse::<MaskScheme>().unwrap(), MaskScheme::Checkerboard);
        assert_eq!("cycle-1".parse::<MaskScheme>().unwrap(), MaskScheme::Cycle);
        assert!("stripes".parse::<MaskScheme>().is_err());
    }
}
