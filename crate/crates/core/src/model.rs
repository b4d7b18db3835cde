//! Dual-branch fusion `Y = sigmoid(F_CNN + F_QNN)`, its ablation variants,
//! and automatic thresholding of the sigmoid map.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::circuits::{qnn_backward, qnn_forward_traced, QnnParams, QnnTrace, N_CHANNELS};
use crate::cnn::{cnn_backward, cnn_forward_traced, CnnParams, CnnTrace};
use crate::error::{Error, Result};

/// Which second track, if any, is added to the CNN track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    CnnOnly,
    CnnCnn,
    CnnQnn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CnnOnly, Variant::CnnCnn, Variant::CnnQnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CnnOnly => "cnn_only",
            Variant::CnnCnn => "cnn_cnn",
            Variant::CnnQnn => "cnn_qnn",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::CnnOnly => 0,
            Variant::CnnCnn => 1,
            Variant::CnnQnn => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected cnn_only, cnn_cnn or cnn_qnn)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SecondTrack {
    None,
    /// Independent weights; nothing is shared with the first track.
    Cnn(CnnParams),
    Qnn(QnnParams),
}

/// Every trainable weight of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub cnn: CnnParams,
    pub second: SecondTrack,
}

impl ModelParams {
    pub fn random<R: Rng + ?Sized>(variant: Variant, feat_width: usize, rng: &mut R) -> Self {
        let cnn = CnnParams::random(N_CHANNELS, feat_width, rng);
        let second = match variant {
            Variant::CnnOnly => SecondTrack::None,
            Variant::CnnCnn => SecondTrack::Cnn(CnnParams::random(N_CHANNELS, feat_width, rng)),
            Variant::CnnQnn => SecondTrack::Qnn(QnnParams::random(rng)),
        };
        ModelParams { cnn, second }
    }

    pub fn zeros(variant: Variant, feat_width: usize) -> Self {
        let cnn = CnnParams::zeros(N_CHANNELS, feat_width);
        let second = match variant {
            Variant::CnnOnly => SecondTrack::None,
            Variant::CnnCnn => SecondTrack::Cnn(CnnParams::zeros(N_CHANNELS, feat_width)),
            Variant::CnnQnn => SecondTrack::Qnn(QnnParams::default()),
        };
        ModelParams { cnn, second }
    }

    pub fn variant(&self) -> Variant {
        match self.second {
            SecondTrack::None => Variant::CnnOnly,
            SecondTrack::Cnn(_) => Variant::CnnCnn,
            SecondTrack::Qnn(_) => Variant::CnnQnn,
        }
    }

    pub fn feat_width(&self) -> usize {
        self.cnn.feat_width()
    }

    pub fn qnn(&self) -> Option<&QnnParams> {
        match &self.second {
            SecondTrack::Qnn(q) => Some(q),
            _ => None,
        }
    }

    pub fn n_params(&self) -> usize {
        self.cnn.n_params()
            + match &self.second {
                SecondTrack::None => 0,
                SecondTrack::Cnn(c) => c.n_params(),
                SecondTrack::Qnn(_) => QnnParams::LEN,
            }
    }

    /// Number of parameters a model of this shape has, without building it.
    pub fn count_for(variant: Variant, feat_width: usize) -> usize {
        ModelParams::zeros(variant, feat_width).n_params()
    }

    /// Every trainable scalar once: first CNN track, then the second track.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.cnn.write_flat(&mut out);
        match &self.second {
            SecondTrack::None => {}
            SecondTrack::Cnn(c) => c.write_flat(&mut out),
            SecondTrack::Qnn(q) => out.extend(q.to_flat()),
        }
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                values.len()
            )));
        }
        let mut src = values;
        self.cnn.read_flat(&mut src)?;
        match &mut self.second {
            SecondTrack::None => {}
            SecondTrack::Cnn(c) => c.read_flat(&mut src)?,
            SecondTrack::Qnn(q) => *q = QnnParams::from_flat(src)?,
        }
        Ok(())
    }

    /// Flat mask of entries subject to weight decay: CNN weights only.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.n_params());
        self.cnn.write_weight_mask(&mut out);
        match &self.second {
            SecondTrack::None => {}
            SecondTrack::Cnn(c) => c.write_weight_mask(&mut out),
            SecondTrack::Qnn(_) => out.extend(std::iter::repeat_n(false, QnnParams::LEN)),
        }
        out
    }
}

/// Per-pixel mangrove likelihood in `[0, 1]`. Maps built from logits stay
/// strictly inside the interval so the loss never sees `ln 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmoidMap(Array2<f64>);

const SIGMOID_FLOOR: f64 = f64::MIN_POSITIVE;
const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SigmoidMap {
    pub fn from_logits(logits: &Array2<f64>) -> Self {
        SigmoidMap(logits.mapv(|z| sigmoid(z).clamp(SIGMOID_FLOOR, SIGMOID_CEIL)))
    }

    /// Wraps probabilities, rejecting values outside `[0, 1]` and NaN.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("sigmoid values must lie in [0, 1]"));
        }
        Ok(SigmoidMap(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Branch activations of one forward pass.
pub struct ForwardTrace {
    cnn: CnnTrace,
    second: SecondTrace,
    pub logits: Array2<f64>,
}

enum SecondTrace {
    None,
    Cnn(CnnTrace),
    Qnn(QnnTrace),
}

fn check_input(x: &Array3<f64>) -> Result<()> {
    let (c, h, w) = x.dim();
    if c != N_CHANNELS {
        return Err(Error::contract(format!(
            "model expects {N_CHANNELS} bands, got {c}"
        )));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(format!(
            "model input must have even dims, got {h}x{w}"
        )));
    }
    Ok(())
}

pub fn forward_traced(x: &Array3<f64>, params: &ModelParams) -> Result<ForwardTrace> {
    check_input(x)?;
    let cnn = cnn_forward_traced(x, &params.cnn)?;
    let mut logits = cnn.output.clone();
    let second = match &params.second {
        SecondTrack::None => SecondTrace::None,
        SecondTrack::Cnn(p) => {
            let t = cnn_forward_traced(x, p)?;
            logits += &t.output;
            SecondTrace::Cnn(t)
        }
        SecondTrack::Qnn(p) => {
            let t = qnn_forward_traced(x, p)?;
            logits += &t.output;
            SecondTrace::Qnn(t)
        }
    };
    Ok(ForwardTrace {
        cnn,
        second,
        logits,
    })
}

/// `sigmoid(F_CNN + F_second)` for a `12 x H x W` input with even `H, W`.
pub fn forward(x: &Array3<f64>, params: &ModelParams) -> Result<SigmoidMap> {
    Ok(SigmoidMap::from_logits(&forward_traced(x, params)?.logits))
}

/// Gradient with respect to every parameter given `dL/dlogits`. Both
/// branches receive the same upstream gradient since they are summed.
pub fn backward(
    x: &Array3<f64>,
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_logits: &Array2<f64>,
) -> Result<ModelParams> {
    let cnn = cnn_backward(x, &params.cnn, &trace.cnn, grad_logits)?;
    let second = match (&params.second, &trace.second) {
        (SecondTrack::None, SecondTrace::None) => SecondTrack::None,
        (SecondTrack::Cnn(p), SecondTrace::Cnn(t)) => {
            SecondTrack::Cnn(cnn_backward(x, p, t, grad_logits)?)
        }
        (SecondTrack::Qnn(p), SecondTrace::Qnn(t)) => {
            SecondTrack::Qnn(qnn_backward(x, p, t, grad_logits)?)
        }
        _ => return Err(Error::contract("trace does not match parameters")),
    };
    Ok(ModelParams { cnn, second })
}

/// Binary classification produced by [`auto_threshold`].
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholded {
    pub threshold: f64,
    pub classes: Array2<u8>,
}

/// Half of the 90th-percentile sigmoid value (the largest value left after
/// dropping the top tenth, picked by index `floor(0.9 n)` of the ascending
/// sort); pixels strictly above it are labelled 1.
pub fn auto_threshold(y: &SigmoidMap) -> Result<Thresholded> {
    let values = y.values();
    if values.is_empty() {
        return Err(Error::contract("cannot threshold an empty map"));
    }
    let mut sorted: Vec<f64> = values.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let idx = (9 * sorted.len() / 10).min(sorted.len() - 1);
    let threshold = sorted[idx] / 2.0;
    Ok(Thresholded {
        threshold,
        classes: apply_threshold(values, threshold),
    })
}

/// `1` where the value is strictly greater than `threshold`.
pub fn apply_threshold(values: &Array2<f64>, threshold: f64) -> Array2<u8> {
    values.mapv(|v| u8::from(v > threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(values: Vec<f64>, shape: (usize, usize)) -> SigmoidMap {
        SigmoidMap::new(Array2::from_shape_vec(shape, values).unwrap()).unwrap()
    }

    #[test]
    fn zero_branches_give_half() {
        let p = ModelParams::zeros(Variant::CnnQnn, 4);
        let y = forward(&Array3::zeros((12, 4, 4)), &p).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_map_threshold() {
        let t = auto_threshold(&sig(vec![0.8; 16], (4, 4))).unwrap();
        assert_eq!(t.threshold, 0.4);
        assert!(t.classes.iter().all(|&c| c == 1));
    }

    #[test]
    fn ramp_threshold() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let mut v_shifted = v.clone();
        v_shifted[0] = 1e-9; // sigmoid maps exclude 0
        let t = auto_threshold(&sig(v_shifted, (10, 10))).unwrap();
        assert_eq!(t.threshold, 0.45);
        assert_eq!(t.classes.iter().filter(|&&c| c == 1).count(), 54);
    }

    #[test]
    fn epsilon_map() {
        let eps = 1e-6;
        let t = auto_threshold(&sig(vec![eps; 9], (3, 3))).unwrap();
        assert_eq!(t.threshold, eps / 2.0);
        assert!(t.classes.iter().all(|&c| c == 1));
    }

    #[test]
    fn sigmoid_map_bounds() {
        assert!(SigmoidMap::new(Array2::from_elem((1, 1), 1.0 + 1e-12)).is_err());
        assert!(SigmoidMap::new(Array2::from_elem((1, 1), -1e-12)).is_err());
        assert!(SigmoidMap::new(Array2::from_elem((1, 1), f64::NAN)).is_err());
        assert!(SigmoidMap::new(ndarray::array![[0.0, 1.0]]).is_ok());
        let y = SigmoidMap::from_logits(&Array2::from_elem((1, 2), 800.0));
        assert!(y.values().iter().all(|&v| v < 1.0));
        let y = SigmoidMap::from_logits(&Array2::from_elem((1, 2), -800.0));
        assert!(y.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn flat_view_round_trip_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in Variant::ALL {
            let p = ModelParams::random(v, 4, &mut rng);
            assert_eq!(p.variant(), v);
            let flat = p.to_flat();
            assert_eq!(flat.len(), p.n_params());
            assert_eq!(p.decay_mask().len(), p.n_params());
            let mut q = ModelParams::zeros(v, 4);
            q.assign_flat(&flat).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
        assert!("qnn_only".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_isolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array3::from_shape_simple_fn((12, 4, 4), || rng.random::<f64>());
        let full = ModelParams::random(Variant::CnnQnn, 4, &mut rng);
        let mut perturbed = full.clone();
        if let SecondTrack::Qnn(q) = &mut perturbed.second {
            q.ffb.top_qfm.ry2[2] += 0.5;
        }
        let a = forward(&x, &full).unwrap();
        let b = forward(&x, &perturbed).unwrap();
        assert_ne!(a, b);

        let cnn_only = ModelParams {
            cnn: full.cnn.clone(),
            second: SecondTrack::None,
        };
        let base = forward(&x, &cnn_only).unwrap();
        let logits = crate::cnn::cnn_forward(&x, &full.cnn).unwrap();
        assert_eq!(base, SigmoidMap::from_logits(&logits));
    }
}
