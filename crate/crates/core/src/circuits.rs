//! The QNN branch: quantum spatial encoder, spectral encoder, fusion module
//! (QFM) and feature fusion block (FFB), composed as
//! `bicubic(ffb(spectral(spatial(X))))`.
//!
//! Every classical value enters a circuit through [`encode_angle`] and every
//! measured `<Z>` leaves through [`decode_z`], so all module outputs lie in
//! `[0, 1]` whatever the parameters.
//!
//! Wire layout (qubit indices, `Toffoli(control-1, control-0, target)`):
//!
//! * spatial encoder, 4 qubits: RY x4, IsingXX chain (0,1) (1,2) (2,3),
//!   Toffoli ring (0,1,2) (1,2,3) (2,3,0) (3,0,1), read qubit 3.
//! * spectral encoder, 4 qubits: RY x4, IsingXX ring (0,1) (1,2) (2,3) (3,0),
//!   RX x4, IsingXX ring, RY x4, Toffoli ring, read all qubits.
//! * QFM, 3 qubits: RY x3, IsingXX (0,1) (1,2), RX x3, IsingXX (2,0), RY x3,
//!   Toffoli ring (0,1,2) (1,2,0) (2,0,1), read qubit 2.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::{Array2, Array3};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::qsim::{decode_z, encode_angle, expect_z, Circuit, Gate};
use crate::upsample::Bicubic2x;

pub const N_CHANNELS: usize = 12;
pub const N_GROUPS: usize = 3;
const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpatialEncoderParams {
    pub ry: [f64; 4],
    pub ising: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectralGroupParams {
    pub ry1: [f64; 4],
    pub ising1: [f64; 4],
    pub rx: [f64; 4],
    pub ising2: [f64; 4],
    pub ry2: [f64; 4],
}

/// Independent weights for each of the three channel groups.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectralEncoderParams {
    pub groups: [SpectralGroupParams; N_GROUPS],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QfmParams {
    pub ry1: [f64; 3],
    pub ising1: [f64; 2],
    pub rx: [f64; 3],
    pub ising2: [f64; 1],
    pub ry2: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FfbParams {
    pub group_qfm: [QfmParams; N_GROUPS],
    pub top_qfm: QfmParams,
}

/// All 115 QNN angles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QnnParams {
    pub spatial: SpatialEncoderParams,
    pub spectral: SpectralEncoderParams,
    pub ffb: FfbParams,
}

fn pack(out: &mut Vec<f64>, parts: &[&[f64]]) {
    for p in parts {
        out.extend_from_slice(p);
    }
}

fn unpack<const N: usize>(src: &mut &[f64]) -> [f64; N] {
    let (head, rest) = src.split_at(N);
    *src = rest;
    head.try_into().expect("split_at yields N values")
}

impl SpatialEncoderParams {
    pub const LEN: usize = 7;

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::LEN);
        pack(&mut v, &[&self.ry, &self.ising]);
        v
    }

    fn read(src: &mut &[f64]) -> Self {
        SpatialEncoderParams {
            ry: unpack(src),
            ising: unpack(src),
        }
    }
}

impl SpectralGroupParams {
    pub const LEN: usize = 20;

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::LEN);
        pack(
            &mut v,
            &[&self.ry1, &self.ising1, &self.rx, &self.ising2, &self.ry2],
        );
        v
    }

    fn read(src: &mut &[f64]) -> Self {
        SpectralGroupParams {
            ry1: unpack(src),
            ising1: unpack(src),
            rx: unpack(src),
            ising2: unpack(src),
            ry2: unpack(src),
        }
    }
}

impl QfmParams {
    pub const LEN: usize = 12;

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::LEN);
        pack(
            &mut v,
            &[&self.ry1, &self.ising1, &self.rx, &self.ising2, &self.ry2],
        );
        v
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != Self::LEN {
            return Err(Error::contract(format!(
                "QFM takes {} angles, got {}",
                Self::LEN,
                values.len()
            )));
        }
        Ok(Self::read(&mut &values[..]))
    }

    fn read(src: &mut &[f64]) -> Self {
        QfmParams {
            ry1: unpack(src),
            ising1: unpack(src),
            rx: unpack(src),
            ising2: unpack(src),
            ry2: unpack(src),
        }
    }
}

const SPECTRAL_OFFSET: usize = SpatialEncoderParams::LEN;
const GROUP_QFM_OFFSET: usize = SPECTRAL_OFFSET + N_GROUPS * SpectralGroupParams::LEN;
const TOP_QFM_OFFSET: usize = GROUP_QFM_OFFSET + N_GROUPS * QfmParams::LEN;

impl QnnParams {
    pub const LEN: usize = TOP_QFM_OFFSET + QfmParams::LEN;

    /// Flat view in the order spatial, spectral groups 1-3, group QFMs 1-3,
    /// top QFM.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::LEN);
        v.extend(self.spatial.flat());
        for g in &self.spectral.groups {
            v.extend(g.flat());
        }
        for q in &self.ffb.group_qfm {
            v.extend(q.flat());
        }
        v.extend(self.ffb.top_qfm.flat());
        v
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != Self::LEN {
            return Err(Error::contract(format!(
                "QNN takes {} angles, got {}",
                Self::LEN,
                values.len()
            )));
        }
        let src = &mut &values[..];
        let spatial = SpatialEncoderParams::read(src);
        let groups = std::array::from_fn(|_| SpectralGroupParams::read(src));
        let group_qfm = std::array::from_fn(|_| QfmParams::read(src));
        let top_qfm = QfmParams::read(src);
        Ok(QnnParams {
            spatial,
            spectral: SpectralEncoderParams { groups },
            ffb: FfbParams { group_qfm, top_qfm },
        })
    }

    /// Uniform on `[-0.1, 0.1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let v: Vec<f64> = (0..Self::LEN)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        Self::from_flat(&v).expect("length matches")
    }
}

fn toffoli_ring(n: usize) -> impl Iterator<Item = Gate> {
    (0..n).map(move |i| Gate::toffoli(i, (i + 1) % n, (i + 2) % n))
}

pub fn spatial_circuit() -> &'static Circuit {
    static CIRCUIT: OnceLock<Circuit> = OnceLock::new();
    CIRCUIT.get_or_init(|| {
        let mut gates: Vec<Gate> = (0..4).map(|q| Gate::ry(q, q)).collect();
        gates.extend((0..3).map(|i| Gate::ising_xx(i, i + 1, 4 + i)));
        gates.extend(toffoli_ring(4));
        Circuit::new(4, SpatialEncoderParams::LEN, gates, vec![3]).expect("valid layout")
    })
}

pub fn spectral_circuit() -> &'static Circuit {
    static CIRCUIT: OnceLock<Circuit> = OnceLock::new();
    CIRCUIT.get_or_init(|| {
        let ring = |base: usize| (0..4).map(move |i| Gate::ising_xx(i, (i + 1) % 4, base + i));
        let mut gates: Vec<Gate> = (0..4).map(|q| Gate::ry(q, q)).collect();
        gates.extend(ring(4));
        gates.extend((0..4).map(|q| Gate::rx(q, 8 + q)));
        gates.extend(ring(12));
        gates.extend((0..4).map(|q| Gate::ry(q, 16 + q)));
        gates.extend(toffoli_ring(4));
        Circuit::new(4, SpectralGroupParams::LEN, gates, vec![0, 1, 2, 3]).expect("valid layout")
    })
}

pub fn qfm_circuit() -> &'static Circuit {
    static CIRCUIT: OnceLock<Circuit> = OnceLock::new();
    CIRCUIT.get_or_init(|| {
        let mut gates: Vec<Gate> = (0..3).map(|q| Gate::ry(q, q)).collect();
        gates.push(Gate::ising_xx(0, 1, 3));
        gates.push(Gate::ising_xx(1, 2, 4));
        gates.extend((0..3).map(|q| Gate::rx(q, 5 + q)));
        gates.push(Gate::ising_xx(2, 0, 8));
        gates.extend((0..3).map(|q| Gate::ry(q, 9 + q)));
        gates.extend(toffoli_ring(3));
        Circuit::new(3, QfmParams::LEN, gates, vec![2]).expect("valid layout")
    })
}

fn angles<const N: usize>(values: &[f64]) -> [f64; N] {
    std::array::from_fn(|i| encode_angle(values[i]))
}

fn decoded_readouts<const N: usize>(circuit: &Circuit, params: &[f64], inputs: &[f64]) -> [f64; N] {
    let state = circuit.run_unchecked(params, &angles::<N>(inputs));
    std::array::from_fn(|k| decode_z(expect_z(&state, circuit.readout()[k])))
}

/// Compresses one 2x2 patch (row-major) into a single value.
pub fn spatial_encode(patch: [f64; 4], params: &SpatialEncoderParams) -> f64 {
    spatial_with(&params.flat(), &patch)
}

fn spatial_with(flat: &[f64], patch: &[f64]) -> f64 {
    let state = spatial_circuit().run_unchecked(flat, &angles::<4>(patch));
    decode_z(expect_z(&state, 3))
}

/// Refines one group of four channel values; `group` is 0-based.
pub fn spectral_encode(
    values: [f64; 4],
    group: usize,
    params: &SpectralEncoderParams,
) -> Result<[f64; 4]> {
    let p = params
        .groups
        .get(group)
        .ok_or_else(|| Error::contract(format!("spectral group {group} out of range")))?;
    Ok(decoded_readouts::<4>(
        spectral_circuit(),
        &p.flat(),
        &values,
    ))
}

pub fn qfm(inputs: [f64; 3], params: &QfmParams) -> f64 {
    qfm_with(&params.flat(), &inputs)
}

fn qfm_with(flat: &[f64], inputs: &[f64]) -> f64 {
    let state = qfm_circuit().run_unchecked(flat, &angles::<3>(inputs));
    decode_z(expect_z(&state, 2))
}

/// Shortcut merge of a group's QFM output with the group's fourth channel.
fn merge(qfm_out: f64, shortcut: f64) -> f64 {
    0.5 * (qfm_out + shortcut)
}

/// Fuses 12 channel values into one.
pub fn ffb(channels: [f64; 12], params: &FfbParams) -> f64 {
    let flat = FlatQnn::ffb_only(params);
    fuse(&flat, &channels).1
}

/// Flat per-circuit parameter slices, converted once per pass.
struct FlatQnn {
    spatial: Vec<f64>,
    spectral: [Vec<f64>; N_GROUPS],
    group_qfm: [Vec<f64>; N_GROUPS],
    top_qfm: Vec<f64>,
}

impl FlatQnn {
    fn new(p: &QnnParams) -> Self {
        FlatQnn {
            spatial: p.spatial.flat(),
            spectral: std::array::from_fn(|g| p.spectral.groups[g].flat()),
            group_qfm: std::array::from_fn(|g| p.ffb.group_qfm[g].flat()),
            top_qfm: p.ffb.top_qfm.flat(),
        }
    }

    fn ffb_only(p: &FfbParams) -> Self {
        FlatQnn {
            spatial: Vec::new(),
            spectral: Default::default(),
            group_qfm: std::array::from_fn(|g| p.group_qfm[g].flat()),
            top_qfm: p.top_qfm.flat(),
        }
    }
}

fn fuse(flat: &FlatQnn, channels: &[f64]) -> ([f64; N_GROUPS], f64) {
    let merged: [f64; N_GROUPS] = std::array::from_fn(|g| {
        let c = &channels[4 * g..4 * g + 4];
        merge(qfm_with(&flat.group_qfm[g], &c[..3]), c[3])
    });
    let out = qfm_with(&flat.top_qfm, &merged);
    (merged, out)
}

/// Intermediate maps of one QNN forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct QnnTrace {
    /// Spatial encoder output, `12 x H/2 x W/2`.
    pub spatial: Array3<f64>,
    /// Spectral encoder output, `12 x H/2 x W/2`.
    pub spectral: Array3<f64>,
    /// Per-group shortcut merges feeding the top QFM, `3 x H/2 x W/2`.
    pub merged: Array3<f64>,
    /// FFB output before upsampling, `H/2 x W/2`.
    pub fused: Array2<f64>,
    /// Upsampled QNN feature map, `H x W`.
    pub output: Array2<f64>,
}

struct PixelTrace {
    spatial: [f64; N_CHANNELS],
    spectral: [f64; N_CHANNELS],
    merged: [f64; N_GROUPS],
    fused: f64,
}

fn patch(x: &Array3<f64>, c: usize, py: usize, px: usize) -> [f64; 4] {
    let (y, xx) = (2 * py, 2 * px);
    [
        x[[c, y, xx]],
        x[[c, y, xx + 1]],
        x[[c, y + 1, xx]],
        x[[c, y + 1, xx + 1]],
    ]
}

fn check_input(x: &Array3<f64>) -> Result<(usize, usize)> {
    let (c, h, w) = x.dim();
    if c != N_CHANNELS {
        return Err(Error::contract(format!(
            "QNN expects {N_CHANNELS} channels, got {c}"
        )));
    }
    if h % 2 != 0 || w % 2 != 0 || h < 4 || w < 4 {
        return Err(Error::contract(format!(
            "QNN needs even spatial dims of at least 4x4, got {h}x{w}"
        )));
    }
    Ok((h / 2, w / 2))
}

fn pixel_forward(flat: &FlatQnn, x: &Array3<f64>, py: usize, px: usize) -> PixelTrace {
    let spatial: [f64; N_CHANNELS] =
        std::array::from_fn(|c| spatial_with(&flat.spatial, &patch(x, c, py, px)));
    let mut spectral = [0.0; N_CHANNELS];
    for g in 0..N_GROUPS {
        let out: [f64; 4] = decoded_readouts(
            spectral_circuit(),
            &flat.spectral[g],
            &spatial[4 * g..4 * g + 4],
        );
        spectral[4 * g..4 * g + 4].copy_from_slice(&out);
    }
    let (merged, fused) = fuse(flat, &spectral);
    PixelTrace {
        spatial,
        spectral,
        merged,
        fused,
    }
}

/// Full QNN branch with intermediates. `x` is `12 x H x W` with even `H, W`.
pub fn qnn_forward_traced(x: &Array3<f64>, params: &QnnParams) -> Result<QnnTrace> {
    let (h, w) = check_input(x)?;
    let flat = FlatQnn::new(params);
    let rows: Vec<Vec<PixelTrace>> = (0..h)
        .into_par_iter()
        .map(|py| (0..w).map(|px| pixel_forward(&flat, x, py, px)).collect())
        .collect();

    let mut trace = QnnTrace {
        spatial: Array3::zeros((N_CHANNELS, h, w)),
        spectral: Array3::zeros((N_CHANNELS, h, w)),
        merged: Array3::zeros((N_GROUPS, h, w)),
        fused: Array2::zeros((h, w)),
        output: Array2::zeros((0, 0)),
    };
    for (py, row) in rows.iter().enumerate() {
        for (px, p) in row.iter().enumerate() {
            for c in 0..N_CHANNELS {
                trace.spatial[[c, py, px]] = p.spatial[c];
                trace.spectral[[c, py, px]] = p.spectral[c];
            }
            for g in 0..N_GROUPS {
                trace.merged[[g, py, px]] = p.merged[g];
            }
            trace.fused[[py, px]] = p.fused;
        }
    }
    trace.output = Bicubic2x::new(h, w)?.forward(&trace.fused)?;
    Ok(trace)
}

/// `F_QNN` for a `12 x H x W` input; output is `H x W`.
pub fn qnn_forward(x: &Array3<f64>, params: &QnnParams) -> Result<Array2<f64>> {
    Ok(qnn_forward_traced(x, params)?.output)
}

// d(encode_angle)/dx inside [0, 1]; every internal value lies there.
const ENCODE_SLOPE: f64 = PI;
// d(decode_z)/dz
const DECODE_SLOPE: f64 = -0.5;

fn pixel_backward(
    flat: &FlatQnn,
    x: &Array3<f64>,
    trace: &QnnTrace,
    py: usize,
    px: usize,
    g_fused: f64,
    grad: &mut [f64],
) {
    let spectral: [f64; N_CHANNELS] = std::array::from_fn(|c| trace.spectral[[c, py, px]]);
    let spatial: [f64; N_CHANNELS] = std::array::from_fn(|c| trace.spatial[[c, py, px]]);
    let merged: [f64; N_GROUPS] = std::array::from_fn(|g| trace.merged[[g, py, px]]);

    let mut g_merged = [0.0; N_GROUPS];
    qfm_circuit().accumulate_grad(
        &flat.top_qfm,
        &angles::<3>(&merged),
        &[DECODE_SLOPE * g_fused],
        &mut grad[TOP_QFM_OFFSET..],
        Some(&mut g_merged),
    );

    let mut g_spectral = [0.0; N_CHANNELS];
    for g in 0..N_GROUPS {
        let g_z = ENCODE_SLOPE * g_merged[g];
        let (g_qfm, g_shortcut) = (0.5 * g_z, 0.5 * g_z);
        let mut g_in = [0.0; 3];
        let off = GROUP_QFM_OFFSET + g * QfmParams::LEN;
        qfm_circuit().accumulate_grad(
            &flat.group_qfm[g],
            &angles::<3>(&spectral[4 * g..4 * g + 3]),
            &[DECODE_SLOPE * g_qfm],
            &mut grad[off..off + QfmParams::LEN],
            Some(&mut g_in),
        );
        for k in 0..3 {
            g_spectral[4 * g + k] = ENCODE_SLOPE * g_in[k];
        }
        g_spectral[4 * g + 3] = g_shortcut;
    }

    let mut g_spatial = [0.0; N_CHANNELS];
    for g in 0..N_GROUPS {
        let weights: [f64; 4] = std::array::from_fn(|k| DECODE_SLOPE * g_spectral[4 * g + k]);
        if weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let mut g_in = [0.0; 4];
        let off = SPECTRAL_OFFSET + g * SpectralGroupParams::LEN;
        spectral_circuit().accumulate_grad(
            &flat.spectral[g],
            &angles::<4>(&spatial[4 * g..4 * g + 4]),
            &weights,
            &mut grad[off..off + SpectralGroupParams::LEN],
            Some(&mut g_in),
        );
        for k in 0..4 {
            g_spatial[4 * g + k] = ENCODE_SLOPE * g_in[k];
        }
    }

    for (c, &g) in g_spatial.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        spatial_circuit().accumulate_grad(
            &flat.spatial,
            &angles::<4>(&patch(x, c, py, px)),
            &[DECODE_SLOPE * g],
            &mut grad[..SpatialEncoderParams::LEN],
            None,
        );
    }
}

/// Gradient of a scalar loss with respect to all QNN angles, given
/// `grad_output = dL/dF_QNN` on the full-resolution grid.
///
/// Rows of the half-resolution grid are processed in parallel; their
/// partial sums are reduced in row order so the result does not depend on
/// the number of worker threads.
pub fn qnn_backward(
    x: &Array3<f64>,
    params: &QnnParams,
    trace: &QnnTrace,
    grad_output: &Array2<f64>,
) -> Result<QnnParams> {
    let (h, w) = check_input(x)?;
    let g_fused = Bicubic2x::new(h, w)?.adjoint(grad_output)?;
    let flat = FlatQnn::new(params);
    let partials: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|py| {
            let mut grad = vec![0.0; QnnParams::LEN];
            for px in 0..w {
                let g = g_fused[[py, px]];
                if g != 0.0 {
                    pixel_backward(&flat, x, trace, py, px, g, &mut grad);
                }
            }
            grad
        })
        .collect();
    let mut total = vec![0.0; QnnParams::LEN];
    for row in &partials {
        for (t, r) in total.iter_mut().zip(row) {
            *t += r;
        }
    }
    QnnParams::from_flat(&total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count_is_115() {
        assert_eq!(QnnParams::LEN, 115);
        assert_eq!(spatial_circuit().n_params(), 7);
        assert_eq!(spectral_circuit().n_params(), 20);
        assert_eq!(qfm_circuit().n_params(), 12);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = QnnParams::random(&mut rng);
        let flat = p.to_flat();
        assert!(flat.iter().all(|v| v.abs() <= 0.1));
        assert_eq!(QnnParams::from_flat(&flat).unwrap(), p);
        assert!(QnnParams::from_flat(&flat[1..]).is_err());
    }

    #[test]
    fn gate_counts_match_architecture() {
        use crate::qsim::GateKind::*;
        let count = |c: &Circuit, k| c.gates().iter().filter(|g| g.kind == k).count();
        let s = spatial_circuit();
        assert_eq!(
            (count(s, Ry), count(s, IsingXx), count(s, Toffoli)),
            (4, 3, 4)
        );
        let s = spectral_circuit();
        assert_eq!(
            (
                count(s, Ry),
                count(s, IsingXx),
                count(s, Rx),
                count(s, Toffoli)
            ),
            (8, 8, 4, 4)
        );
        let s = qfm_circuit();
        assert_eq!(
            (
                count(s, Ry),
                count(s, IsingXx),
                count(s, Rx),
                count(s, Toffoli)
            ),
            (6, 3, 3, 3)
        );
    }

    #[test]
    fn zero_cases() {
        let z = QnnParams::default();
        assert_eq!(spatial_encode([0.0; 4], &z.spatial), 0.0);
        assert!((spatial_encode([1.0; 4], &z.spatial) - 1.0).abs() < 1e-15);
        assert_eq!(spectral_encode([0.0; 4], 1, &z.spectral).unwrap(), [0.0; 4]);
        assert!(spectral_encode([0.0; 4], 3, &z.spectral).is_err());
        assert_eq!(qfm([0.0; 3], &z.ffb.top_qfm), 0.0);
        assert_eq!(ffb([0.0; 12], &z.ffb), 0.0);
    }

    #[test]
    fn zero_raster_gives_zero_map() {
        let x = Array3::zeros((12, 4, 4));
        let out = qnn_forward(&x, &QnnParams::default()).unwrap();
        assert_eq!(out.dim(), (4, 4));
        assert!(out.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn odd_or_wrong_shapes_rejected() {
        let p = QnnParams::default();
        assert!(qnn_forward(&Array3::zeros((12, 5, 4)), &p).is_err());
        assert!(qnn_forward(&Array3::zeros((11, 4, 4)), &p).is_err());
    }

    #[test]
    fn shortcut_is_wired() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = QnnParams::random(&mut rng).ffb;
        for _ in 0..20 {
            let ch: [f64; 12] = std::array::from_fn(|_| rng.random::<f64>());
            let with = ffb(ch, &p);
            let without_inputs: [f64; 3] = std::array::from_fn(|g| {
                qfm([ch[4 * g], ch[4 * g + 1], ch[4 * g + 2]], &p.group_qfm[g])
            });
            let without = qfm(without_inputs, &p.top_qfm);
            assert!((with - without).abs() > 1e-9);
        }
    }

    #[test]
    fn patch_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = QnnParams::random(&mut rng);
        let x = Array3::from_shape_fn((12, 4, 4), |_| rng.random::<f64>());
        // swap the top-left and bottom-right 2x2 patches in every channel
        let mut swapped = x.clone();
        for c in 0..12 {
            for dy in 0..2 {
                for dx in 0..2 {
                    swapped[[c, dy, dx]] = x[[c, 2 + dy, 2 + dx]];
                    swapped[[c, 2 + dy, 2 + dx]] = x[[c, dy, dx]];
                }
            }
        }
        let a = qnn_forward_traced(&x, &p).unwrap().fused;
        let b = qnn_forward_traced(&swapped, &p).unwrap().fused;
        assert_eq!(a[[0, 0]], b[[1, 1]]);
        assert_eq!(a[[1, 1]], b[[0, 0]]);
        assert_eq!(a[[0, 1]], b[[0, 1]]);
        assert_eq!(a[[1, 0]], b[[1, 0]]);
    }
}
