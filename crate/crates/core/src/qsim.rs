//! Exact statevector simulation for registers of up to four qubits.
//!
//! Qubit ordering is little-endian: qubit `q` is bit `q` of the basis
//! index. Multi-qubit gate matrices are written in the local basis formed by
//! the gate's target list, with the first target as the most significant
//! bit. For the Toffoli gate the targets are `(control-1, control-0,
//! target)`, so its matrix is `DIAG(I4, X, I2)`: it flips the target only
//! when the first control is 1 and the second control is 0.
//!
//! Gates are applied by walking amplitude pairs (or quads) with the
//! appropriate stride; the full `2^n x 2^n` operator is never built.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 4;
const MAX_DIM: usize = 1 << MAX_QUBITS;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateKind {
    Rx,
    Ry,
    IsingXx,
    PauliZ,
    Not,
    Toffoli,
}

impl GateKind {
    pub const ALL: [GateKind; 6] = [
        GateKind::Rx,
        GateKind::Ry,
        GateKind::IsingXx,
        GateKind::PauliZ,
        GateKind::Not,
        GateKind::Toffoli,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::PauliZ | GateKind::Not => 1,
            GateKind::IsingXx => 2,
            GateKind::Toffoli => 3,
        }
    }

    pub fn is_parameterized(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::IsingXx)
    }
}

/// Unitary matrix of a gate at angle `theta` (ignored by fixed gates).
pub fn gate_matrix(kind: GateKind, theta: f64) -> DMatrix<Complex64> {
    let (s, c) = (theta / 2.0).sin_cos();
    let d = Complex64::new(c, 0.0);
    let g = Complex64::new(s, 0.0);
    let mig = Complex64::new(0.0, -s);
    match kind {
        GateKind::Rx => DMatrix::from_row_slice(2, 2, &[d, mig, mig, d]),
        GateKind::Ry => DMatrix::from_row_slice(2, 2, &[d, -g, g, d]),
        GateKind::IsingXx => DMatrix::from_row_slice(
            4,
            4,
            &[
                d, ZERO, ZERO, mig, //
                ZERO, d, mig, ZERO, //
                ZERO, mig, d, ZERO, //
                mig, ZERO, ZERO, d,
            ],
        ),
        GateKind::PauliZ => DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        GateKind::Not => DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        GateKind::Toffoli => {
            let mut m = DMatrix::identity(8, 8);
            m[(4, 4)] = ZERO;
            m[(5, 5)] = ZERO;
            m[(4, 5)] = ONE;
            m[(5, 4)] = ONE;
            m
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    targets: [usize; 3],
    pub param_slot: Option<usize>,
}

impl Gate {
    /// Builds a gate, checking target count, target distinctness and that a
    /// parameter slot is given exactly for the parameterized kinds.
    pub fn new(kind: GateKind, targets: &[usize], param_slot: Option<usize>) -> Result<Self> {
        if targets.len() != kind.arity() {
            return Err(Error::contract(format!(
                "{kind:?} takes {} target(s), got {}",
                kind.arity(),
                targets.len()
            )));
        }
        for (i, a) in targets.iter().enumerate() {
            if targets[..i].contains(a) {
                return Err(Error::contract(format!(
                    "{kind:?} has repeated target qubit {a}"
                )));
            }
        }
        if kind.is_parameterized() != param_slot.is_some() {
            return Err(Error::contract(format!(
                "{kind:?} parameter slot presence mismatch"
            )));
        }
        let mut t = [0; 3];
        t[..targets.len()].copy_from_slice(targets);
        Ok(Gate {
            kind,
            targets: t,
            param_slot,
        })
    }

    pub fn rx(qubit: usize, slot: usize) -> Self {
        Gate::fixed(GateKind::Rx, [qubit, 0, 0], Some(slot))
    }

    pub fn ry(qubit: usize, slot: usize) -> Self {
        Gate::fixed(GateKind::Ry, [qubit, 0, 0], Some(slot))
    }

    pub fn ising_xx(a: usize, b: usize, slot: usize) -> Self {
        assert_ne!(a, b, "IsingXX targets must differ");
        Gate::fixed(GateKind::IsingXx, [a, b, 0], Some(slot))
    }

    pub fn pauli_z(qubit: usize) -> Self {
        Gate::fixed(GateKind::PauliZ, [qubit, 0, 0], None)
    }

    pub fn not(qubit: usize) -> Self {
        Gate::fixed(GateKind::Not, [qubit, 0, 0], None)
    }

    /// Toffoli that fires when `control_one` is 1 and `control_zero` is 0.
    pub fn toffoli(control_one: usize, control_zero: usize, target: usize) -> Self {
        assert!(
            control_one != control_zero && control_one != target && control_zero != target,
            "Toffoli wires must be distinct"
        );
        Gate::fixed(GateKind::Toffoli, [control_one, control_zero, target], None)
    }

    fn fixed(kind: GateKind, targets: [usize; 3], param_slot: Option<usize>) -> Self {
        Gate {
            kind,
            targets,
            param_slot,
        }
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets[..self.kind.arity()]
    }
}

/// Complex amplitude vector of an `n`-qubit register, `1 <= n <= 4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: [Complex64; MAX_DIM],
}

impl StateVector {
    /// The all-zeros basis state `|0...0>`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        if index >= 1 << n_qubits {
            return Err(Error::contract(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        let mut amps = [ZERO; MAX_DIM];
        amps[index] = ONE;
        Ok(StateVector { n_qubits, amps })
    }

    /// Wraps caller-provided amplitudes; the length must be a power of two
    /// and the vector must be normalized to 1e-10.
    pub fn from_amplitudes(amplitudes: &[Complex64]) -> Result<Self> {
        let n = amplitudes.len().trailing_zeros() as usize;
        if amplitudes.len() != 1 << n {
            return Err(Error::contract(format!(
                "amplitude count {} is not a power of two",
                amplitudes.len()
            )));
        }
        check_qubit_count(n)?;
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::contract(format!("state norm {norm} is not 1")));
        }
        let mut amps = [ZERO; MAX_DIM];
        amps[..amplitudes.len()].copy_from_slice(amplitudes);
        Ok(StateVector { n_qubits: n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps[..self.dim()]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes().iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `gate` in place, reading its angle from `params`.
    pub fn apply(&mut self, gate: &Gate, params: &[f64]) -> Result<()> {
        for &t in gate.targets() {
            if t >= self.n_qubits {
                return Err(Error::contract(format!(
                    "target qubit {t} out of range for {} qubits",
                    self.n_qubits
                )));
            }
        }
        let theta = match gate.param_slot {
            Some(slot) => *params.get(slot).ok_or_else(|| {
                Error::contract(format!(
                    "parameter slot {slot} out of range ({} given)",
                    params.len()
                ))
            })?,
            None => 0.0,
        };
        self.apply_raw(gate.kind, &gate.targets, theta);
        Ok(())
    }

    /// Stride-walk update; targets are assumed valid.
    fn apply_raw(&mut self, kind: GateKind, targets: &[usize; 3], theta: f64) {
        let dim = self.dim();
        let amps = &mut self.amps[..dim];
        match kind {
            GateKind::Ry => {
                let (s, c) = (theta / 2.0).sin_cos();
                let bit = 1 << targets[0];
                for i in (0..dim).filter(|i| i & bit == 0) {
                    let (a0, a1) = (amps[i], amps[i | bit]);
                    amps[i] = a0 * c - a1 * s;
                    amps[i | bit] = a0 * s + a1 * c;
                }
            }
            GateKind::Rx => {
                let (s, c) = (theta / 2.0).sin_cos();
                let mis = Complex64::new(0.0, -s);
                let bit = 1 << targets[0];
                for i in (0..dim).filter(|i| i & bit == 0) {
                    let (a0, a1) = (amps[i], amps[i | bit]);
                    amps[i] = a0 * c + a1 * mis;
                    amps[i | bit] = a0 * mis + a1 * c;
                }
            }
            GateKind::IsingXx => {
                let (s, c) = (theta / 2.0).sin_cos();
                let mis = Complex64::new(0.0, -s);
                let (hi, lo) = (1 << targets[0], 1 << targets[1]);
                for i in (0..dim).filter(|i| i & (hi | lo) == 0) {
                    let (i01, i10, i11) = (i | lo, i | hi, i | hi | lo);
                    let (a00, a01, a10, a11) = (amps[i], amps[i01], amps[i10], amps[i11]);
                    amps[i] = a00 * c + a11 * mis;
                    amps[i01] = a01 * c + a10 * mis;
                    amps[i10] = a01 * mis + a10 * c;
                    amps[i11] = a00 * mis + a11 * c;
                }
            }
            GateKind::PauliZ => {
                let bit = 1 << targets[0];
                for a in amps.iter_mut().enumerate().filter(|(i, _)| i & bit != 0) {
                    *a.1 = -*a.1;
                }
            }
            GateKind::Not => {
                let bit = 1 << targets[0];
                for i in (0..dim).filter(|i| i & bit == 0) {
                    amps.swap(i, i | bit);
                }
            }
            GateKind::Toffoli => {
                let (c1, c0, t) = (1 << targets[0], 1 << targets[1], 1 << targets[2]);
                for i in (0..dim).filter(|i| i & (c1 | c0 | t) == c1) {
                    amps.swap(i, i | t);
                }
            }
        }
    }
}

fn check_qubit_count(n: usize) -> Result<()> {
    if (1..=MAX_QUBITS).contains(&n) {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "qubit count {n} outside 1..={MAX_QUBITS}"
        )))
    }
}

/// Returns a copy of `state` with `gate` applied.
pub fn apply_gate(state: &StateVector, gate: &Gate, params: &[f64]) -> Result<StateVector> {
    let mut out = *state;
    out.apply(gate, params)?;
    Ok(out)
}

/// `<Z>` on one qubit.
pub fn expect_z(state: &StateVector, qubit: usize) -> f64 {
    let bit = 1 << qubit;
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if i & bit == 0 {
                a.norm_sqr()
            } else {
                -a.norm_sqr()
            }
        })
        .sum()
}

/// Angle encoding of a value in `[0, 1]`; out-of-range inputs are clamped.
pub fn encode_angle(x: f64) -> f64 {
    PI * x.clamp(0.0, 1.0)
}

/// Maps `<Z>` in `[-1, 1]` to `[0, 1]`: `|0>` decodes to 0, `|1>` to 1.
pub fn decode_z(z: f64) -> f64 {
    (1.0 - z) / 2.0
}

/// A validated gate program. Execution starts from `|0...0>`, applies one
/// encoding `RY(input_angles[q])` per qubit and then the gates in order.
#[derive(Clone, Debug)]
pub struct Circuit {
    n_qubits: usize,
    n_params: usize,
    gates: Vec<Gate>,
    readout: Vec<usize>,
}

#[derive(Clone, Copy)]
enum AngleSource {
    Fixed,
    Param(usize),
    Input(usize),
}

/// Gradient of a weighted readout objective.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitGradient {
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

impl Circuit {
    pub fn new(
        n_qubits: usize,
        n_params: usize,
        gates: Vec<Gate>,
        readout: Vec<usize>,
    ) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        for (i, g) in gates.iter().enumerate() {
            let g = Gate::new(g.kind, g.targets(), g.param_slot)
                .map_err(|e| Error::contract(format!("gate {i}: {e}")))?;
            if let Some(&t) = g.targets().iter().find(|&&t| t >= n_qubits) {
                return Err(Error::contract(format!(
                    "gate {i}: target {t} out of range for {n_qubits} qubits"
                )));
            }
            if let Some(slot) = g.param_slot {
                if slot >= n_params {
                    return Err(Error::contract(format!(
                        "gate {i}: parameter slot {slot} >= {n_params}"
                    )));
                }
            }
        }
        for (i, q) in readout.iter().enumerate() {
            if *q >= n_qubits || readout[..i].contains(q) {
                return Err(Error::contract(format!("invalid readout qubit {q}")));
            }
        }
        Ok(Circuit {
            n_qubits,
            n_params,
            gates,
            readout,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn readout(&self) -> &[usize] {
        &self.readout
    }

    fn check_lengths(&self, params: &[f64], input_angles: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        if input_angles.len() != self.n_qubits {
            return Err(Error::contract(format!(
                "expected {} input angles, got {}",
                self.n_qubits,
                input_angles.len()
            )));
        }
        Ok(())
    }

    // Encoding rotations followed by the gate list.
    fn ops(&self) -> impl Iterator<Item = (GateKind, [usize; 3], AngleSource)> + '_ {
        let encoding = (0..self.n_qubits).map(|q| (GateKind::Ry, [q, 0, 0], AngleSource::Input(q)));
        let body = self.gates.iter().map(|g| {
            let src = g.param_slot.map_or(AngleSource::Fixed, AngleSource::Param);
            (g.kind, g.targets, src)
        });
        encoding.chain(body)
    }

    fn angle(src: AngleSource, params: &[f64], inputs: &[f64]) -> f64 {
        match src {
            AngleSource::Fixed => 0.0,
            AngleSource::Param(s) => params[s],
            AngleSource::Input(q) => inputs[q],
        }
    }

    fn run_from(
        &self,
        mut state: StateVector,
        start: usize,
        params: &[f64],
        inputs: &[f64],
    ) -> StateVector {
        for (kind, targets, src) in self.ops().skip(start) {
            state.apply_raw(kind, &targets, Self::angle(src, params, inputs));
        }
        state
    }

    pub(crate) fn run_unchecked(&self, params: &[f64], inputs: &[f64]) -> StateVector {
        let zero = StateVector::zero(self.n_qubits).expect("validated qubit count");
        self.run_from(zero, 0, params, inputs)
    }

    fn objective(&self, state: &StateVector, weights: &[f64]) -> f64 {
        self.readout
            .iter()
            .zip(weights)
            .map(|(&q, &w)| w * expect_z(state, q))
            .sum()
    }

    /// Parameter-shift gradient of `sum_k weights[k] * <Z_readout[k]>`,
    /// added into `grad_params` and, when given, `grad_inputs`.
    ///
    /// Each shifted evaluation restarts from the state just before the
    /// shifted operation, so the prefix is simulated only once.
    pub(crate) fn accumulate_grad(
        &self,
        params: &[f64],
        inputs: &[f64],
        weights: &[f64],
        grad_params: &mut [f64],
        mut grad_inputs: Option<&mut [f64]>,
    ) {
        let mut prefix = StateVector::zero(self.n_qubits).expect("validated qubit count");
        for (k, (kind, targets, src)) in self.ops().enumerate() {
            let theta = Self::angle(src, params, inputs);
            let wanted = match src {
                AngleSource::Fixed => false,
                AngleSource::Param(_) => true,
                AngleSource::Input(_) => grad_inputs.is_some(),
            };
            if wanted {
                let mut plus = prefix;
                plus.apply_raw(kind, &targets, theta + FRAC_PI_2);
                let plus = self.run_from(plus, k + 1, params, inputs);
                let mut minus = prefix;
                minus.apply_raw(kind, &targets, theta - FRAC_PI_2);
                let minus = self.run_from(minus, k + 1, params, inputs);
                let d = 0.5 * (self.objective(&plus, weights) - self.objective(&minus, weights));
                match src {
                    AngleSource::Param(s) => grad_params[s] += d,
                    AngleSource::Input(q) => {
                        if let Some(g) = grad_inputs.as_deref_mut() {
                            g[q] += d;
                        }
                    }
                    AngleSource::Fixed => {}
                }
            }
            prefix.apply_raw(kind, &targets, theta);
        }
    }
}

/// Runs `circuit` from `|0...0>` with the given encoding angles.
pub fn run_circuit(circuit: &Circuit, params: &[f64], input_angles: &[f64]) -> Result<StateVector> {
    circuit.check_lengths(params, input_angles)?;
    if params.iter().chain(input_angles).any(|a| !a.is_finite()) {
        return Err(Error::contract("non-finite angle"));
    }
    Ok(circuit.run_unchecked(params, input_angles))
}

/// Exact gradient of `sum_k readout_weights[k] * <Z_readout[k]>` with
/// respect to both the trainable parameters and the encoding angles, via
/// `(f(a + pi/2) - f(a - pi/2)) / 2` per angle occurrence.
pub fn param_shift_grad(
    circuit: &Circuit,
    params: &[f64],
    input_angles: &[f64],
    readout_weights: &[f64],
) -> Result<CircuitGradient> {
    circuit.check_lengths(params, input_angles)?;
    if readout_weights.len() != circuit.readout.len() {
        return Err(Error::contract(format!(
            "expected {} readout weights, got {}",
            circuit.readout.len(),
            readout_weights.len()
        )));
    }
    let mut grad = CircuitGradient {
        params: vec![0.0; circuit.n_params],
        inputs: vec![0.0; circuit.n_qubits],
    };
    circuit.accumulate_grad(
        params,
        input_angles,
        readout_weights,
        &mut grad.params,
        Some(&mut grad.inputs),
    );
    Ok(grad)
}

/// Weighted readout objective evaluated on a fresh run.
pub fn readout_objective(
    circuit: &Circuit,
    params: &[f64],
    input_angles: &[f64],
    readout_weights: &[f64],
) -> Result<f64> {
    let state = run_circuit(circuit, params, input_angles)?;
    if readout_weights.len() != circuit.readout.len() {
        return Err(Error::contract("readout weight count mismatch"));
    }
    Ok(circuit.objective(&state, readout_weights))
}
