//! Twelve-channel minutiae maps: encoding, decoding, and multi-set voting.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{format_err, invalid, Result};
use crate::model::{angle_diff, wrap_2pi, Minutia};

pub const CHANNELS: usize = 12;
/// Angular spacing between adjacent channels.
pub const CHANNEL_STEP: f64 = TAU / CHANNELS as f64;
pub const DEFAULT_SIGMA_S: f64 = 3.0;
pub const DEFAULT_SIGMA_O: f64 = PI / 6.0;
pub const DEFAULT_THRESHOLD: f64 = 0.25;

/// Spatial contributions are truncated at this many `sigma_s`.
const SPATIAL_CUTOFF: f64 = 6.0;

pub const VOTE_DISTANCE: f64 = 8.0;
pub const VOTE_ANGLE: f64 = PI / 6.0;
pub const VOTE_MIN_SETS: usize = 2;
pub const VOTE_SET_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderParams {
    pub sigma_s: f64,
    pub sigma_o: f64,
}

impl EncoderParams {
    pub fn new(sigma_s: f64, sigma_o: f64) -> Result<Self> {
        if !(sigma_s > 0.0 && sigma_o > 0.0) {
            return Err(invalid("encoder widths must be positive"));
        }
        Ok(EncoderParams { sigma_s, sigma_o })
    }
}

impl Default for EncoderParams {
    fn default() -> Self {
        EncoderParams { sigma_s: DEFAULT_SIGMA_S, sigma_o: DEFAULT_SIGMA_O }
    }
}

/// Dense `h × w × 12` grid, stored row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct MinutiaeMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl MinutiaeMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        MinutiaeMap { height, width, values: vec![0.0; height * width * CHANNELS] }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let expected = height * width * CHANNELS;
        if values.len() != expected {
            return Err(crate::Error::LengthMismatch { expected, actual: values.len() });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("minutiae map values must be finite and non-negative"));
        }
        Ok(MinutiaeMap { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.width + j) * CHANNELS + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let o = self.offset(i, j, k);
        self.values[o] = v;
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Per-pixel maximum over channels, useful for visualisation.
    pub fn channel_max(&self) -> Vec<f32> {
        self.values.chunks_exact(CHANNELS).map(|c| c.iter().copied().fold(0.0, f32::max)).collect()
    }

    pub fn write_flat<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_u32::<LittleEndian>(self.height as u32)?;
        w.write_u32::<LittleEndian>(self.width as u32)?;
        w.write_u32::<LittleEndian>(CHANNELS as u32)?;
        for &v in &self.values {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_flat<R: Read>(mut r: R) -> Result<Self> {
        let height = r.read_u32::<LittleEndian>()? as usize;
        let width = r.read_u32::<LittleEndian>()? as usize;
        let channels = r.read_u32::<LittleEndian>()? as usize;
        if channels != CHANNELS {
            return Err(format_err(format!("expected {CHANNELS} channels, found {channels}")));
        }
        let n = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(CHANNELS))
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| format_err("map dimensions too large"))?;
        let mut values = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut values)?;
        MinutiaeMap::from_values(height, width, values)
    }
}

#[inline]
fn channel_center(k: usize) -> f64 {
    k as f64 * PI / 6.0
}

pub fn encode_minutiae_map(minutiae: &[Minutia], height: usize, width: usize, params: EncoderParams) -> Result<MinutiaeMap> {
    let mut map = MinutiaeMap::zeros(height, width);
    for m in minutiae {
        if !(m.x >= 0.0 && m.y >= 0.0 && m.x < width as f64 && m.y < height as f64) {
            return Err(invalid(format!("minutia ({}, {}) outside {width}x{height}", m.x, m.y)));
        }
        add_minutia(&mut map, m, params);
    }
    Ok(map)
}

fn add_minutia(map: &mut MinutiaeMap, m: &Minutia, params: EncoderParams) {
    let mut orient = [0f64; CHANNELS];
    for (k, o) in orient.iter_mut().enumerate() {
        let d = angle_diff(m.theta, channel_center(k));
        *o = (-d * d / (2.0 * params.sigma_o * params.sigma_o)).exp();
    }
    let reach = SPATIAL_CUTOFF * params.sigma_s;
    let two_var = 2.0 * params.sigma_s * params.sigma_s;
    let i0 = (m.y - reach).floor().max(0.0) as usize;
    let i1 = ((m.y + reach).ceil() as usize).min(map.height - 1);
    let j0 = (m.x - reach).floor().max(0.0) as usize;
    let j1 = ((m.x + reach).ceil() as usize).min(map.width - 1);
    for i in i0..=i1 {
        let dy = i as f64 - m.y;
        for j in j0..=j1 {
            let dx = j as f64 - m.x;
            let d2 = dx * dx + dy * dy;
            if d2 > reach * reach {
                continue;
            }
            let spatial = (-d2 / two_var).exp();
            let base = map.offset(i, j, 0);
            for k in 0..CHANNELS {
                map.values[base + k] += (spatial * orient[k]) as f32;
            }
        }
    }
}

/// Vertex of the parabola through channels `c-1, c, c+1` at pixel `(i, j)`.
pub fn interpolate_orientation(map: &MinutiaeMap, i: usize, j: usize, c: usize) -> f64 {
    let c = c % CHANNELS;
    let f0 = map.get(i, j, (c + CHANNELS - 1) % CHANNELS) as f64;
    let f1 = map.get(i, j, c) as f64;
    let f2 = map.get(i, j, (c + 1) % CHANNELS) as f64;
    let t = parabola_vertex(f0, f1, f2);
    if t == 0.0 {
        return channel_center(c);
    }
    wrap_2pi((c as f64 + t) * CHANNEL_STEP)
}

/// Offset of the vertex of the parabola through `(-1, f0), (0, f1), (1, f2)`;
/// zero unless the parabola opens downward.
pub fn parabola_vertex(f0: f64, f1: f64, f2: f64) -> f64 {
    let curvature = f0 - 2.0 * f1 + f2;
    if curvature < 0.0 {
        (f0 - f2) / (2.0 * curvature)
    } else {
        0.0
    }
}

/// Peaks above `threshold` that dominate their 5×5×3 neighbourhood.
///
/// Plateaus are resolved in scan order: a cell must beat earlier neighbours
/// strictly and later ones weakly, so exactly one cell of a plateau survives.
pub fn decode_minutiae_map(map: &MinutiaeMap, threshold: f64) -> Vec<Minutia> {
    let (h, w) = (map.height as isize, map.width as isize);
    let mut out = Vec::new();
    for i in 0..map.height {
        for j in 0..map.width {
            for c in 0..CHANNELS {
                let v = map.get(i, j, c);
                if (v as f64) <= threshold || !is_peak(map, i as isize, j as isize, c, v, h, w) {
                    continue;
                }
                let theta = interpolate_orientation(map, i, j, c);
                out.push(Minutia::real(j as f64, i as f64, theta));
            }
        }
    }
    out
}

fn is_peak(map: &MinutiaeMap, i: isize, j: isize, c: usize, v: f32, h: isize, w: isize) -> bool {
    let me = (i, j, c);
    for di in -2..=2 {
        let ii = i + di;
        if ii < 0 || ii >= h {
            continue;
        }
        for dj in -2..=2 {
            let jj = j + dj;
            if jj < 0 || jj >= w {
                continue;
            }
            for dc in [CHANNELS - 1, 0, 1] {
                let cc = (c + dc) % CHANNELS;
                if (di, dj, cc) == (0, 0, c) {
                    continue;
                }
                let u = map.get(ii as usize, jj as usize, cc);
                if u > v || (u == v && (ii, jj, cc) < me) {
                    return false;
                }
            }
        }
    }
    true
}

fn votes_match(a: &Minutia, b: &Minutia) -> bool {
    a.distance(b) < VOTE_DISTANCE && angle_diff(a.theta, b.theta) < VOTE_ANGLE
}

/// Minutiae confirmed by at least two of the five latent minutiae sets.
pub fn vote_common_minutiae(sets: &[Vec<Minutia>]) -> Result<Vec<Minutia>> {
    if sets.len() != VOTE_SET_COUNT {
        return Err(invalid(format!("expected {VOTE_SET_COUNT} minutiae sets, got {}", sets.len())));
    }
    let all: Vec<(usize, Minutia)> =
        sets.iter().enumerate().flat_map(|(s, set)| set.iter().map(move |m| (s, *m))).collect();
    let mut used = vec![false; all.len()];
    let mut clusters: Vec<Option<Vec<usize>>> = vec![None; all.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for seed in 0..all.len() {
            if used[seed] {
                continue;
            }
            if clusters[seed].as_ref().is_none_or(|c| c.iter().any(|&m| used[m])) {
                clusters[seed] = Some(grow_cluster(&all, &used, seed));
            }
            let cluster = clusters[seed].as_ref().unwrap();
            let spread = cluster_spread(&all, cluster);
            let better = match best {
                None => true,
                Some((_, size, s)) => cluster.len() > size || (cluster.len() == size && spread < s),
            };
            if better {
                best = Some((seed, cluster.len(), spread));
            }
        }
        let Some((seed, size, _)) = best else { break };
        if size < VOTE_MIN_SETS {
            break;
        }
        let cluster = clusters[seed].take().unwrap();
        for &m in &cluster {
            used[m] = true;
        }
        out.push(merge_cluster(&all, &cluster));
    }
    Ok(out)
}

/// Seed plus, from each other set, the nearest unused minutia that matches
/// every member chosen so far.
fn grow_cluster(all: &[(usize, Minutia)], used: &[bool], seed: usize) -> Vec<usize> {
    let mut members = vec![seed];
    let seed_set = all[seed].0;
    for set in 0..VOTE_SET_COUNT {
        if set == seed_set {
            continue;
        }
        let pick = all
            .iter()
            .enumerate()
            .filter(|&(idx, (s, m))| {
                *s == set && !used[idx] && members.iter().all(|&o| votes_match(&all[o].1, m))
            })
            .min_by(|a, b| {
                let da = a.1 .1.distance(&all[seed].1);
                let db = b.1 .1.distance(&all[seed].1);
                da.total_cmp(&db).then(a.0.cmp(&b.0))
            })
            .map(|(idx, _)| idx);
        if let Some(idx) = pick {
            members.push(idx);
        }
    }
    members.sort_unstable();
    members
}

fn cluster_spread(all: &[(usize, Minutia)], cluster: &[usize]) -> f64 {
    let mut total = 0.0;
    for (a, &i) in cluster.iter().enumerate() {
        for &j in &cluster[a + 1..] {
            total += all[i].1.distance(&all[j].1);
        }
    }
    total
}

fn merge_cluster(all: &[(usize, Minutia)], cluster: &[usize]) -> Minutia {
    let n = cluster.len() as f64;
    let (mut x, mut y, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
    for &i in cluster {
        let m = &all[i].1;
        x += m.x;
        y += m.y;
        s += m.theta.sin();
        c += m.theta.cos();
    }
    Minutia::real(x / n, y / n, s.atan2(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encode(ms: &[Minutia]) -> MinutiaeMap {
        encode_minutiae_map(ms, 64, 64, EncoderParams::default()).unwrap()
    }

    #[test]
    fn empty_set_encodes_to_zero() {
        let map = encode(&[]);
        assert!(map.values().iter().all(|&v| v == 0.0));
        assert!(decode_minutiae_map(&map, DEFAULT_THRESHOLD).is_empty());
    }

    #[test]
    fn single_minutia_peak_and_spatial_falloff() {
        let map = encode(&[Minutia::real(32.0, 32.0, PI / 2.0)]);
        assert!((map.get(32, 32, 3) - 1.0).abs() < 1e-6);
        let expected = (-0.5f64).exp();
        assert!((map.get(35, 32, 3) as f64 - expected).abs() < 1e-6);
        assert!((map.get(32, 29, 3) as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn rejects_out_of_bounds() {
        assert!(encode_minutiae_map(&[Minutia::real(64.0, 3.0, 0.0)], 64, 64, EncoderParams::default()).is_err());
        assert!(EncoderParams::new(0.0, 1.0).is_err());
    }

    fn single_pixel_map(vals: [f32; 3], c: usize) -> MinutiaeMap {
        let mut map = MinutiaeMap::zeros(1, 1);
        map.set(0, 0, (c + CHANNELS - 1) % CHANNELS, vals[0]);
        map.set(0, 0, c, vals[1]);
        map.set(0, 0, (c + 1) % CHANNELS, vals[2]);
        map
    }

    #[test]
    fn symmetric_responses_give_channel_center() {
        let map = single_pixel_map([0.2, 1.0, 0.2], 3);
        assert_eq!(interpolate_orientation(&map, 0, 0, 3), PI / 2.0);
    }

    #[test]
    fn interpolation_matches_dense_parabola_maximum() {
        let vals = [0.5f32, 1.0, 0.1];
        let map = single_pixel_map(vals, 3);
        let got = interpolate_orientation(&map, 0, 0, 3);
        // Lagrange form, evaluated densely, then refined by golden section.
        let (f0, f1, f2) = (vals[0] as f64, vals[1] as f64, vals[2] as f64);
        let p = |t: f64| f0 * t * (t - 1.0) / 2.0 - f1 * (t - 1.0) * (t + 1.0) + f2 * t * (t + 1.0) / 2.0;
        let mut best = -1.0;
        for s in 0..=200_000 {
            let t = -1.0 + s as f64 * 1e-5;
            if p(t) > p(best) {
                best = t;
            }
        }
        let (mut a, mut b) = (best - 1e-5, best + 1e-5);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (x1, x2) = (b - g * (b - a), a + g * (b - a));
            if p(x1) < p(x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        let oracle = (3.0 + (a + b) / 2.0) * PI / 6.0;
        assert!(got < PI / 2.0, "vertex should lean towards channel 2");
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn flat_or_convex_responses_fall_back() {
        assert_eq!(interpolate_orientation(&single_pixel_map([0.4, 0.4, 0.4], 5), 0, 0, 5), 5.0 * PI / 6.0);
        assert_eq!(interpolate_orientation(&single_pixel_map([0.5, 0.4, 0.5], 0), 0, 0, 0), 0.0);
    }

    #[test]
    fn channel_wraps_between_eleven_and_zero() {
        let map = encode(&[Minutia::real(20.0, 20.0, TAU - 0.05)]);
        let got = decode_minutiae_map(&map, DEFAULT_THRESHOLD);
        assert_eq!(got.len(), 1);
        assert!(angle_diff(got[0].theta, TAU - 0.05) < PI / 72.0);
    }

    #[test]
    fn round_trip_single() {
        let truth = Minutia::real(32.0, 32.0, PI / 2.0);
        let got = decode_minutiae_map(&encode(&[truth]), DEFAULT_THRESHOLD);
        assert_eq!(got.len(), 1);
        assert!(got[0].distance(&truth) <= 1.0);
        assert!(angle_diff(got[0].theta, truth.theta) <= PI / 72.0);
    }

    #[test]
    fn round_trip_between_channels() {
        let theta = 5.0 * PI / 24.0;
        let got = decode_minutiae_map(&encode(&[Minutia::real(30.0, 31.0, theta)]), DEFAULT_THRESHOLD);
        assert_eq!(got.len(), 1);
        assert!(angle_diff(got[0].theta, theta) <= PI / 72.0, "{}", got[0].theta);
    }

    #[test]
    fn half_channel_plateau_yields_one_minutia() {
        let theta = CHANNEL_STEP * 2.5;
        let got = decode_minutiae_map(&encode(&[Minutia::real(30.0, 30.0, theta)]), DEFAULT_THRESHOLD);
        assert_eq!(got.len(), 1);
        assert!(angle_diff(got[0].theta, theta) < PI / 36.0);
    }

    fn separated_set(rng: &mut ChaCha8Rng, n: usize, size: f64, sep: f64) -> Vec<Minutia> {
        let mut out: Vec<Minutia> = Vec::new();
        while out.len() < n {
            let m = Minutia::real(
                rng.random_range(4.0..size - 4.0),
                rng.random_range(4.0..size - 4.0),
                rng.random_range(0.0..TAU),
            );
            if out.iter().all(|o| o.distance(&m) >= sep) {
                out.push(m);
            }
        }
        out
    }

    fn assert_one_to_one(truth: &[Minutia], got: &[Minutia]) {
        assert_eq!(got.len(), truth.len());
        let mut taken = vec![false; got.len()];
        for t in truth {
            let hit = got.iter().enumerate().position(|(i, g)| {
                !taken[i] && g.distance(t) <= 2.0 && angle_diff(g.theta, t.theta) <= PI / 36.0
            });
            let i = hit.unwrap_or_else(|| panic!("no decoded minutia for {t:?}"));
            taken[i] = true;
        }
    }

    #[test]
    fn randomized_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let truth = separated_set(&mut rng, 20, 256.0, 16.0);
            let map = encode_minutiae_map(&truth, 256, 256, EncoderParams::default()).unwrap();
            assert_one_to_one(&truth, &decode_minutiae_map(&map, DEFAULT_THRESHOLD));
        }
    }

    #[test]
    fn dense_round_trip_on_full_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth = separated_set(&mut rng, 60, 512.0, 16.0);
        let map = encode_minutiae_map(&truth, 512, 512, EncoderParams::default()).unwrap();
        assert_one_to_one(&truth, &decode_minutiae_map(&map, DEFAULT_THRESHOLD));
    }

    #[test]
    fn rotating_by_one_channel_shifts_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base = separated_set(&mut rng, 6, 64.0, 10.0);
        let turned: Vec<_> = base.iter().map(|m| Minutia::real(m.x, m.y, m.theta + CHANNEL_STEP)).collect();
        let (a, b) = (encode(&base), encode(&turned));
        for i in 0..64 {
            for j in 0..64 {
                for k in 0..CHANNELS {
                    let diff = (a.get(i, j, k) - b.get(i, j, (k + 1) % CHANNELS)).abs();
                    assert!(diff < 1e-6, "({i},{j},{k}) {diff}");
                }
            }
        }
    }

    #[test]
    fn flat_binary_round_trip() {
        let map = encode(&[Minutia::real(10.0, 40.0, 1.0), Minutia::real(50.0, 12.0, 4.0)]);
        let mut buf = Vec::new();
        map.write_flat(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 64 * 64 * CHANNELS * 4);
        assert_eq!(&buf[8..12], &12u32.to_le_bytes());
        assert_eq!(MinutiaeMap::read_flat(buf.as_slice()).unwrap(), map);
        buf[8] = 11;
        assert!(MinutiaeMap::read_flat(buf.as_slice()).is_err());
    }

    fn five(sets: [&[Minutia]; 5]) -> Vec<Vec<Minutia>> {
        sets.iter().map(|s| s.to_vec()).collect()
    }

    #[test]
    fn identical_sets_vote_once() {
        let m = Minutia::real(40.0, 40.0, 1.0);
        let got = vote_common_minutiae(&five([&[m]; 5])).unwrap();
        assert_eq!(got.len(), 1);
        assert!(got[0].distance(&m) < 1e-9 && angle_diff(got[0].theta, 1.0) < 1e-9);
    }

    #[test]
    fn singleton_is_not_emitted() {
        let m = Minutia::real(40.0, 40.0, 1.0);
        assert!(vote_common_minutiae(&five([&[m], &[], &[], &[], &[]])).unwrap().is_empty());
        assert!(vote_common_minutiae(&[vec![m]]).is_err());
    }

    #[test]
    fn vote_threshold_boundaries() {
        let a = Minutia::real(40.0, 40.0, 0.2);
        let near = Minutia::real(47.9, 40.0, 0.2 + PI / 6.0 - 1e-6);
        let far = Minutia::real(48.1, 40.0, 0.2);
        let turned = Minutia::real(41.0, 40.0, 0.2 + PI / 6.0 + 1e-6);
        let got = vote_common_minutiae(&five([&[a], &[near], &[], &[], &[]])).unwrap();
        assert_eq!(got.len(), 1);
        assert!((got[0].x - 43.95).abs() < 1e-9);
        assert!(vote_common_minutiae(&five([&[a], &[far], &[], &[], &[]])).unwrap().is_empty());
        assert!(vote_common_minutiae(&five([&[a], &[turned], &[], &[], &[]])).unwrap().is_empty());
    }

    #[test]
    fn votes_use_circular_mean_and_distinct_sets() {
        let a = Minutia::real(10.0, 10.0, 0.1);
        let b = Minutia::real(10.0, 12.0, TAU - 0.1);
        let got = vote_common_minutiae(&five([&[a], &[b], &[], &[], &[]])).unwrap();
        assert_eq!(got.len(), 1);
        assert!(angle_diff(got[0].theta, 0.0) < 1e-9);
        // two matching minutiae from the same set are not a vote
        assert!(vote_common_minutiae(&five([&[a, b], &[], &[], &[], &[]])).unwrap().is_empty());
    }

    #[test]
    fn largest_cluster_claims_members_first() {
        let hub = Minutia::real(50.0, 50.0, 1.0);
        let side = Minutia::real(56.0, 50.0, 1.0);
        // hub is in four sets, side pairs only with set 4's copy
        let got = vote_common_minutiae(&five([&[hub], &[hub], &[hub], &[hub], &[side]])).unwrap();
        assert_eq!(got.len(), 1);
        assert!((got[0].x - 51.2).abs() < 1e-9, "{:?}", got[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn encoding_is_linear(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s1 = separated_set(&mut rng, 4, 64.0, 0.0);
            let s2 = separated_set(&mut rng, 3, 64.0, 0.0);
            let both: Vec<_> = s1.iter().chain(&s2).copied().collect();
            let (a, b, ab) = (encode(&s1), encode(&s2), encode(&both));
            for ((x, y), z) in a.values().iter().zip(b.values()).zip(ab.values()) {
                prop_assert!((x + y - z).abs() < 1e-5);
            }
        }

        #[test]
        fn decode_count_monotone_in_threshold(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = separated_set(&mut rng, 8, 64.0, 0.0);
            let map = encode(&set);
            let mut last = usize::MAX;
            for t in [0.05, 0.1, 0.25, 0.5, 0.9, 1.5] {
                let n = decode_minutiae_map(&map, t).len();
                prop_assert!(n <= last);
                last = n;
            }
        }
    }
}
