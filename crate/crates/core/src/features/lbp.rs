//! Local binary patterns on three orthogonal planes.
//!
//! Codes use radius 1 and 8 neighbours. Neighbour `b` sits at angle
//! `2*pi*b/8` counter-clockwise from the positive first axis of the plane
//! (`x` for XY and XT, `y` for YT); the second axis is `y` for XY and time
//! for XT and YT. Off-grid neighbours are bilinearly interpolated with
//! 16-bit fixed-point weights, so every comparison is exact integer
//! arithmetic. Bit `b` is set iff `neighbour_b >= center`.

use std::f64::consts::PI;

use super::{FeatureError, FeatureKind, FrameSequence, Result, SegmentFeature, SegmentWindow};

/// Bins of the uniform-2 mapping for 8 neighbours: 58 uniform patterns
/// plus one bin shared by every non-uniform pattern.
pub const UNIFORM_BINS: usize = 59;

/// Length of one block's LBP-TOP vector (XY, XT, YT).
pub const LBP_TOP_LEN: usize = 3 * UNIFORM_BINS;

const WEIGHT_ONE: i64 = 1 << 16;

const fn build_uniform_table() -> [u8; 256] {
    let mut table = [58u8; 256];
    let mut next = 0u8;
    let mut code = 0usize;
    while code < 256 {
        let c = code as u8;
        if (c ^ c.rotate_right(1)).count_ones() <= 2 {
            table[code] = next;
            next += 1;
        }
        code += 1;
    }
    table
}

static UNIFORM_TABLE: [u8; 256] = build_uniform_table();

/// Histogram bin of an 8-bit code under the uniform-2 mapping. Uniform
/// codes are numbered in increasing code order.
pub fn uniform_bin(code: u8) -> usize {
    UNIFORM_TABLE[code as usize] as usize
}

/// Basic LBP code: bit `b` set iff `neighbors[b] >= center`.
pub fn lbp_code<T: PartialOrd>(center: T, neighbors: &[T; 8]) -> u8 {
    neighbors
        .iter()
        .enumerate()
        .fold(0u8, |code, (b, n)| if *n >= center { code | (1 << b) } else { code })
}

/// Lower-left corner offset and fractional weights of one neighbour.
#[derive(Debug, Clone, Copy)]
struct Tap {
    du: isize,
    dv: isize,
    wu: i64,
    wv: i64,
}

impl Tap {
    /// Interpolated value at the tap, scaled by `WEIGHT_ONE^2`.
    #[inline]
    fn sample(&self, get: &impl Fn(isize, isize) -> i64, u: isize, v: isize) -> i64 {
        let (u0, v0) = (u + self.du, v + self.dv);
        let mut acc = (WEIGHT_ONE - self.wu) * (WEIGHT_ONE - self.wv) * get(u0, v0);
        if self.wu != 0 {
            acc += self.wu * (WEIGHT_ONE - self.wv) * get(u0 + 1, v0);
        }
        if self.wv != 0 {
            acc += (WEIGHT_ONE - self.wu) * self.wv * get(u0, v0 + 1);
        }
        if self.wu != 0 && self.wv != 0 {
            acc += self.wu * self.wv * get(u0 + 1, v0 + 1);
        }
        acc
    }
}

fn snap(x: f64) -> f64 {
    if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x
    }
}

fn taps() -> [Tap; 8] {
    std::array::from_fn(|b| {
        let angle = 2.0 * PI * b as f64 / 8.0;
        let u = snap(angle.cos());
        let v = snap(angle.sin());
        let (u0, v0) = (u.floor(), v.floor());
        Tap {
            du: u0 as isize,
            dv: v0 as isize,
            wu: ((u - u0) * WEIGHT_ONE as f64).round() as i64,
            wv: ((v - v0) * WEIGHT_ONE as f64).round() as i64,
        }
    })
}

#[inline]
fn plane_code(get: &impl Fn(isize, isize) -> i64, u: isize, v: isize, taps: &[Tap; 8]) -> u8 {
    let center = get(u, v) * WEIGHT_ONE * WEIGHT_ONE;
    let samples: [i64; 8] = std::array::from_fn(|b| taps[b].sample(get, u, v));
    lbp_code(center, &samples)
}

/// Frames of the XY plane that contribute codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XySampling {
    /// Every frame of the window.
    #[default]
    AllFrames,
    /// Only the temporal center frame (`start + length / 2`).
    CenterFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbpTopConfig {
    /// Spatial block grid; every block gets its own 177-bin vector.
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub xy_sampling: XySampling,
}

impl Default for LbpTopConfig {
    fn default() -> Self {
        LbpTopConfig {
            grid_rows: 1,
            grid_cols: 1,
            xy_sampling: XySampling::AllFrames,
        }
    }
}

impl LbpTopConfig {
    pub fn blocks(&self) -> usize {
        (self.grid_rows * self.grid_cols) as usize
    }

    pub fn dim(&self) -> usize {
        self.blocks() * LBP_TOP_LEN
    }
}

/// Concatenated per-plane uniform-pattern histograms, block by block:
/// `[XY, XT, YT]` of block 0, then block 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct LbpTopHistogram {
    pub bins: Vec<f64>,
}

impl LbpTopHistogram {
    pub fn blocks(&self) -> usize {
        self.bins.len() / LBP_TOP_LEN
    }

    /// Histogram of `plane` (0 = XY, 1 = XT, 2 = YT) in `block`.
    pub fn plane(&self, block: usize, plane: usize) -> &[f64] {
        let start = block * LBP_TOP_LEN + plane * UNIFORM_BINS;
        &self.bins[start..start + UNIFORM_BINS]
    }

    pub fn into_feature(self, window: SegmentWindow) -> Result<SegmentFeature> {
        SegmentFeature::new(self.bins, FeatureKind::LbpTop, window)
    }
}

/// LBP-TOP descriptor of `window` within `seq`.
///
/// XY codes come from the frames chosen by `config.xy_sampling`, XT codes
/// from every row and YT codes from every column. A voxel contributes to a
/// plane when it is interior along both axes of that plane; its block is
/// chosen by its `(x, y)` position. Each block-plane histogram is
/// normalized to sum to one.
pub fn lbp_top(
    seq: &FrameSequence,
    window: SegmentWindow,
    config: &LbpTopConfig,
) -> Result<LbpTopHistogram> {
    window.check_within(seq.len())?;
    if config.grid_rows == 0 || config.grid_cols == 0 {
        return Err(FeatureError::InvalidArgument("block grid must be at least 1x1".into()));
    }
    let (w, h) = (seq.width() as usize, seq.height() as usize);
    let t_len = window.length;
    let degenerate = || FeatureError::DegenerateWindow {
        length: t_len,
        width: seq.width(),
        height: seq.height(),
    };
    if w < 3 || h < 3 || t_len < 3 {
        return Err(degenerate());
    }

    let frames: Vec<&[u8]> = seq.frames()[window.start_index..window.end()]
        .iter()
        .map(|f| f.as_raw().as_slice())
        .collect();
    let taps = taps();
    let (gr, gc) = (config.grid_rows as usize, config.grid_cols as usize);
    let block_of = |x: usize, y: usize| (y * gr / h) * gc + x * gc / w;
    let blocks = gr * gc;
    let mut counts = vec![0u64; blocks * LBP_TOP_LEN];
    let mut bump = |block: usize, plane: usize, code: u8| {
        counts[block * LBP_TOP_LEN + plane * UNIFORM_BINS + uniform_bin(code)] += 1;
    };

    let xy_frames = match config.xy_sampling {
        XySampling::AllFrames => 0..t_len,
        XySampling::CenterFrame => t_len / 2..t_len / 2 + 1,
    };
    for t in xy_frames {
        let frame = frames[t];
        let get = |u: isize, v: isize| frame[v as usize * w + u as usize] as i64;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                bump(block_of(x, y), 0, plane_code(&get, x as isize, y as isize, &taps));
            }
        }
    }
    for y in 0..h {
        let get = |u: isize, v: isize| frames[v as usize][y * w + u as usize] as i64;
        for t in 1..t_len - 1 {
            for x in 1..w - 1 {
                bump(block_of(x, y), 1, plane_code(&get, x as isize, t as isize, &taps));
            }
        }
    }
    for x in 0..w {
        let get = |u: isize, v: isize| frames[v as usize][u as usize * w + x] as i64;
        for t in 1..t_len - 1 {
            for y in 1..h - 1 {
                bump(block_of(x, y), 2, plane_code(&get, y as isize, t as isize, &taps));
            }
        }
    }

    let mut bins = vec![0.0; counts.len()];
    for (src, dst) in counts
        .chunks(UNIFORM_BINS)
        .zip(bins.chunks_mut(UNIFORM_BINS))
    {
        let total: u64 = src.iter().sum();
        if total == 0 {
            return Err(degenerate());
        }
        for (c, d) in src.iter().zip(dst) {
            *d = *c as f64 / total as f64;
        }
    }
    Ok(LbpTopHistogram { bins })
}
