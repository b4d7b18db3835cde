//! Quick invariant suite behind `qednet selftest`.
//!
//! Each check is small enough to finish in well under a second; the
//! heavier oracles live in the integration tests.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuits::{
    ffb, qfm, qfm_circuit, spatial_circuit, spectral_circuit, QfmParams, QnnParams,
};
use crate::data::{raster_from_bytes, raster_to_bytes, synth_scene, SynthSpec};
use crate::indices::{classify_index, Direction, SpectralIndex};
use crate::metrics::{kappa, oa, ConfusionMatrix};
use crate::model::{auto_threshold, forward, ModelParams, SigmoidMap, Variant};
use crate::qsim::{
    expect_z, gate_matrix, param_shift_grad, readout_objective, run_circuit, GateKind, StateVector,
};
use crate::train::{
    bce_loss, checkpoint_from_bytes, checkpoint_to_bytes, sample_loss_grad, Sample,
};
use crate::upsample::Bicubic2x;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("gate_unitarity", gate_unitarity),
    ("statevector_norm", statevector_norm),
    ("parameter_shift", parameter_shift),
    ("module_range", module_range),
    ("bicubic_adjoint", bicubic_adjoint),
    ("metric_oracles", metric_oracles),
    ("index_thresholds", index_thresholds),
    ("auto_threshold", auto_threshold_examples),
    ("end_to_end_gradient", end_to_end_gradient),
    ("container_round_trip", container_round_trip),
    ("parameter_budget", parameter_budget),
];

pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, f)| match f() {
            Ok(detail) => CheckOutcome {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckOutcome {
                name,
                passed: false,
                detail,
            },
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn gate_unitarity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for kind in GateKind::ALL {
        for _ in 0..50 {
            let u = gate_matrix(kind, rng.random_range(-2.0 * PI..2.0 * PI));
            let id = DMatrix::<Complex64>::identity(u.nrows(), u.ncols());
            worst = worst.max((u.adjoint() * &u - id).norm());
        }
    }
    ensure(worst < 1e-12, || format!("max |U'U - I| = {worst:e}"))?;
    Ok(format!("max |U'U - I| = {worst:.1e}"))
}

fn statevector_norm() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for c in [spatial_circuit(), spectral_circuit(), qfm_circuit()] {
        for _ in 0..50 {
            let p: Vec<f64> = (0..c.n_params())
                .map(|_| rng.random_range(-PI..PI))
                .collect();
            let x: Vec<f64> = (0..c.n_qubits())
                .map(|_| rng.random_range(0.0..PI))
                .collect();
            let s = run_circuit(c, &p, &x).map_err(|e| e.to_string())?;
            worst = worst.max((s.norm_sqr() - 1.0).abs());
        }
    }
    ensure(worst < 1e-12, || format!("norm drift {worst:e}"))?;
    Ok(format!("max norm drift {worst:.1e}"))
}

fn parameter_shift() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for c in [spatial_circuit(), spectral_circuit(), qfm_circuit()] {
        let p: Vec<f64> = (0..c.n_params())
            .map(|_| rng.random_range(-PI..PI))
            .collect();
        let x: Vec<f64> = (0..c.n_qubits())
            .map(|_| rng.random_range(0.0..PI))
            .collect();
        let w: Vec<f64> = (0..c.readout().len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let g = param_shift_grad(c, &p, &x, &w).map_err(|e| e.to_string())?;
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (readout_objective(c, &a, &x, &w).unwrap()
                - readout_objective(c, &b, &x, &w).unwrap())
                / (2.0 * h);
            if fd.abs() > 1e-6 {
                worst = worst.max(rel_err(g.params[i], fd));
            } else {
                worst = worst.max((g.params[i] - fd).abs());
            }
        }
    }
    ensure(worst < 1e-4, || format!("max error {worst:e}"))?;
    Ok(format!("max error vs finite differences {worst:.1e}"))
}

fn module_range() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let p = QnnParams::from_flat(
            &(0..QnnParams::LEN)
                .map(|_| rng.random_range(-PI..PI))
                .collect::<Vec<_>>(),
        )
        .map_err(|e| e.to_string())?;
        let ch: [f64; 12] = std::array::from_fn(|_| rng.random());
        let q = qfm([ch[0], ch[1], ch[2]], &p.ffb.top_qfm);
        let f = ffb(ch, &p.ffb);
        ensure((0.0..=1.0).contains(&q) && (0.0..=1.0).contains(&f), || {
            format!("out of range: qfm {q}, ffb {f}")
        })?;
    }
    let s = StateVector::zero(1).map_err(|e| e.to_string())?;
    ensure(expect_z(&s, 0) == 1.0, || "<Z> of |0> is not 1".into())?;
    Ok("200 draws in [0, 1]".into())
}

fn bicubic_adjoint() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let up = Bicubic2x::new(5, 7).map_err(|e| e.to_string())?;
    let a = Array2::from_shape_simple_fn((5, 7), || rng.random::<f64>());
    let b = Array2::from_shape_simple_fn((10, 14), || rng.random::<f64>());
    let lhs = (up.forward(&a).unwrap() * &b).sum();
    let rhs = (&a * &up.adjoint(&b).unwrap()).sum();
    ensure(rel_err(lhs, rhs) < 1e-12, || {
        format!("<Ua,b> {lhs} vs <a,U'b> {rhs}")
    })?;
    Ok("dot-product identity holds".into())
}

fn metric_oracles() -> Result<String, String> {
    let cm = ConfusionMatrix::from_counts([[4, 1], [1, 4]]).map_err(|e| e.to_string())?;
    ensure(oa(&cm) == 80.0 && kappa(&cm) == 0.6, || {
        format!("OA {} kappa {}", oa(&cm), kappa(&cm))
    })?;
    let perfect = ConfusionMatrix::from_counts([[3, 0], [0, 5]]).unwrap();
    ensure(kappa(&perfect) == 1.0, || "perfect kappa != 1".into())?;
    Ok("OA 80 / kappa 0.6, perfect kappa 1".into())
}

fn index_thresholds() -> Result<String, String> {
    let ndvi = SpectralIndex::Ndvi
        .pixel(0.0, 0.2, 0.6, 0.0, 0.0)
        .unwrap_or(f64::NAN);
    let mvi = SpectralIndex::Mvi
        .pixel(0.1, 0.0, 0.4, 0.2, 0.0)
        .unwrap_or(f64::NAN);
    ensure(
        (ndvi - 0.5).abs() < 1e-12 && (mvi - 3.0).abs() < 1e-12,
        || format!("NDVI {ndvi}, MVI {mvi}"),
    )?;
    let c = |v: f64, t: f64| classify_index(&Array2::from_elem((1, 1), v), t, Direction::Above);
    let ok = c(0.5, 0.33).unwrap()[[0, 0]] == 1
        && c(-0.5, -0.27).unwrap()[[0, 0]] == 0
        && c(2.6, 2.6).unwrap()[[0, 0]] == 0;
    ensure(ok, || "threshold comparison wrong".into())?;
    Ok("formulas and 0.33 / -0.27 / 2.6 thresholds".into())
}

fn auto_threshold_examples() -> Result<String, String> {
    let ramp: Vec<f64> = (0..100).map(|i| (i as f64 / 100.0).max(1e-9)).collect();
    let y = SigmoidMap::new(Array2::from_shape_vec((10, 10), ramp).unwrap())
        .map_err(|e| e.to_string())?;
    let t = auto_threshold(&y).map_err(|e| e.to_string())?;
    let n = t.classes.iter().filter(|&&c| c == 1).count();
    ensure(t.threshold == 0.45 && n == 54, || {
        format!("threshold {} with {n} positives", t.threshold)
    })?;
    Ok("ramp gives t = 0.45 and 54 positives".into())
}

fn end_to_end_gradient() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = ModelParams::random(Variant::CnnQnn, 2, &mut rng);
    let x = Array3::from_shape_simple_fn((12, 4, 4), || rng.random::<f64>());
    let gt = Array2::from_shape_simple_fn((4, 4), || u8::from(rng.random::<bool>()));
    let s = Sample::new(x, gt).map_err(|e| e.to_string())?;
    let (_, grad) = sample_loss_grad(&params, &s).map_err(|e| e.to_string())?;
    let flat = params.to_flat();
    let loss_at = |v: &[f64]| {
        let mut p = params.clone();
        p.assign_flat(v).unwrap();
        let y = forward(&s.x, &p).unwrap();
        bce_loss(&y, &s.gt, None).unwrap().loss
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    // every 7th entry plus the whole QNN tail keeps this fast
    let n = flat.len();
    let picks = (0..n).filter(|&i| i % 7 == 0 || i + QnnParams::LEN >= n);
    for i in picks {
        let (mut a, mut b) = (flat.clone(), flat.clone());
        a[i] += h;
        b[i] -= h;
        let fd = (loss_at(&a) - loss_at(&b)) / (2.0 * h);
        let err = if fd.abs() > 1e-6 {
            rel_err(grad[i], fd)
        } else {
            (grad[i] - fd).abs() * 1e3
        };
        worst = worst.max(err);
    }
    ensure(worst < 1e-3, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn container_round_trip() -> Result<String, String> {
    let (r, _) = synth_scene(&SynthSpec::new(3, 8, 0.03)).map_err(|e| e.to_string())?;
    let bytes = raster_to_bytes(&r).map_err(|e| e.to_string())?;
    let back = raster_from_bytes(std::path::Path::new("mem"), &bytes).map_err(|e| e.to_string())?;
    ensure(back == r, || "raster changed in round trip".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = ModelParams::random(Variant::CnnQnn, 4, &mut rng);
    let q = checkpoint_from_bytes(std::path::Path::new("mem"), &checkpoint_to_bytes(&p))
        .map_err(|e| e.to_string())?;
    ensure(p == q, || "checkpoint changed in round trip".into())?;
    Ok("raster and checkpoint bit-exact".into())
}

fn parameter_budget() -> Result<String, String> {
    let total = ModelParams::count_for(Variant::CnnQnn, 64);
    ensure(QnnParams::LEN == 115 && total <= 100_000, || {
        format!("{total} parameters, {} QNN angles", QnnParams::LEN)
    })?;
    let q = QfmParams::LEN;
    Ok(format!(
        "{total} parameters, {} QNN angles ({q} per QFM)",
        QnnParams::LEN
    ))
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
