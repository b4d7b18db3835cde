//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;

pub type C = Complex64;

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Gate unitaries written out entry by entry, row-major.
pub fn closed_form(kind: &str, theta: f64) -> Vec<Vec<C>> {
    let (co, si) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    let cc = c(co, 0.0);
    let mis = c(0.0, -si);
    match kind {
        "rx" => vec![vec![cc, mis], vec![mis, cc]],
        "ry" => vec![vec![cc, c(-si, 0.0)], vec![c(si, 0.0), cc]],
        "ising_xx" => vec![
            vec![cc, z, z, mis],
            vec![z, cc, mis, z],
            vec![z, mis, cc, z],
            vec![mis, z, z, cc],
        ],
        "z" => vec![vec![o, z], vec![z, c(-1.0, 0.0)]],
        "not" => vec![vec![z, o], vec![o, z]],
        // fires when the first control is 1 and the second is 0
        "toffoli" => {
            let mut m = vec![vec![z; 8]; 8];
            for (i, row) in m.iter_mut().enumerate() {
                let j = match i {
                    4 => 5,
                    5 => 4,
                    _ => i,
                };
                row[j] = o;
            }
            m
        }
        _ => panic!("unknown gate {kind}"),
    }
}

/// Embeds a local gate matrix into the full `2^n` space. Qubit `q` is bit
/// `q` of a basis index; `targets[0]` is the most significant local bit.
pub fn embed(local: &[Vec<C>], targets: &[usize], n: usize) -> Vec<Vec<C>> {
    let dim = 1usize << n;
    let k = targets.len();
    let sub = |idx: usize| -> usize {
        targets
            .iter()
            .enumerate()
            .map(|(pos, &t)| ((idx >> t) & 1) << (k - 1 - pos))
            .sum()
    };
    let tmask: usize = targets.iter().map(|&t| 1 << t).sum();
    let mut full = vec![vec![c(0.0, 0.0); dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            if i & !tmask == j & !tmask {
                full[i][j] = local[sub(i)][sub(j)];
            }
        }
    }
    full
}

pub fn matvec(m: &[Vec<C>], v: &[C]) -> Vec<C> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `<Z_q>` straight from the amplitude vector.
pub fn z_expect(v: &[C], q: usize) -> f64 {
    v.iter()
        .enumerate()
        .map(|(i, a)| {
            if (i >> q) & 1 == 0 {
                a.norm_sqr()
            } else {
                -a.norm_sqr()
            }
        })
        .sum()
}

/// Relative error with an absolute floor for tiny reference values.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(got.abs()).max(floor)
}

/// Catmull-Rom weight, written from the textbook piecewise form.
pub fn catmull_rom(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Direct 2x bicubic upsampling: every output pixel sums kernel weights
/// over the 4x4 clamped neighbourhood of its half-pixel source position.
pub fn bicubic_direct(map: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = map.len() as isize;
    let w = map[0].len() as isize;
    let clamp = |i: isize, n: isize| i.clamp(0, n - 1) as usize;
    let mut out = vec![vec![0.0; 2 * w as usize]; 2 * h as usize];
    for (oy, row) in out.iter_mut().enumerate() {
        let sy = (oy as f64 + 0.5) / 2.0 - 0.5;
        for (ox, v) in row.iter_mut().enumerate() {
            let sx = (ox as f64 + 0.5) / 2.0 - 0.5;
            let mut acc = 0.0;
            for iy in (sy.floor() as isize - 1)..=(sy.floor() as isize + 2) {
                for ix in (sx.floor() as isize - 1)..=(sx.floor() as isize + 2) {
                    let wgt = catmull_rom(sy - iy as f64) * catmull_rom(sx - ix as f64);
                    acc += wgt * map[clamp(iy, h)][clamp(ix, w)];
                }
            }
            *v = acc;
        }
    }
    out
}

/// Direct 3x3 zero-padded convolution `out[o] = b[o] + sum_i k[o,i] * x[i]`.
pub fn conv_direct(
    x: &ndarray::Array3<f64>,
    k: &ndarray::Array4<f64>,
    b: &ndarray::Array1<f64>,
) -> ndarray::Array3<f64> {
    let (ci, h, w) = x.dim();
    let co = k.dim().0;
    let mut out = ndarray::Array3::zeros((co, h, w));
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b[o];
                for i in 0..ci {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (sy, sx) =
                                (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                acc += k[[o, i, dy, dx]] * x[[i, sy as usize, sx as usize]];
                            }
                        }
                    }
                }
                out[[o, y, xx]] = acc;
            }
        }
    }
    out
}
