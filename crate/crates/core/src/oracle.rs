//! Plaintext reference implementations of every functionality.
//!
//! Everything here works on canonical residues with arbitrary-precision
//! integers, independently of the share-level code, so protocol outputs can
//! be compared against it.

use num_bigint::{BigInt, BigUint};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model, Shape};

fn big(v: u64) -> BigUint {
    BigUint::from(v)
}

fn small(v: &BigUint) -> u64 {
    v.iter_u64_digits().next().unwrap_or(0)
}

pub fn add(p: u64, a: u64, b: u64) -> u64 {
    small(&((big(a) + big(b)) % big(p)))
}

pub fn mul(p: u64, a: u64, b: u64) -> u64 {
    small(&((big(a) * big(b)) % big(p)))
}

/// Signed view of a residue in `(-p/2, p/2)`.
pub fn signed(p: u64, a: u64) -> i128 {
    if a > p / 2 {
        a as i128 - p as i128
    } else {
        a as i128
    }
}

pub fn from_signed(p: u64, v: i128) -> u64 {
    let m = BigInt::from(v) % BigInt::from(p);
    let m = if m < BigInt::from(0) { m + BigInt::from(p) } else { m };
    small(&m.to_biguint().unwrap())
}

/// `floor(x / 2^ell_x)` of the signed value.
pub fn trunc(p: u64, x: u64, ell_x: u32) -> u64 {
    from_signed(p, signed(p, x) >> ell_x)
}

pub fn dot(p: u64, a: &[u64], b: &[u64]) -> u64 {
    let s: BigUint = a.iter().zip(b).map(|(x, y)| big(*x) * big(*y)).sum();
    small(&(s % big(p)))
}

/// `a * B` with `b[r][c]`.
pub fn vec_mat(p: u64, a: &[u64], b: &[Vec<u64>]) -> Vec<u64> {
    let cols = b.first().map_or(0, |r| r.len());
    (0..cols).map(|c| dot(p, a, &b.iter().map(|r| r[c]).collect::<Vec<_>>())).collect()
}

pub fn vec_mat_trunc(p: u64, ell_x: u32, a: &[u64], b: &[Vec<u64>]) -> Vec<u64> {
    vec_mat(p, a, b).into_iter().map(|x| trunc(p, x, ell_x)).collect()
}

pub fn mat_mul(p: u64, a: &[Vec<u64>], b: &[Vec<u64>]) -> Vec<Vec<u64>> {
    a.iter().map(|row| vec_mat(p, row, b)).collect()
}

pub fn xor(a: u64, b: u64) -> u64 {
    a ^ b
}

pub fn prefix_products(p: u64, xs: &[u64]) -> Vec<u64> {
    let mut acc = 1u64;
    xs.iter()
        .map(|&x| {
            acc = mul(p, acc, x);
            acc
        })
        .collect()
}

pub fn prefix_or(xs: &[u64]) -> Vec<u64> {
    let mut acc = 0u64;
    xs.iter()
        .map(|&x| {
            acc |= x;
            acc
        })
        .collect()
}

/// `[a < b]` as integers.
pub fn less_than(a: u64, b: u64) -> u64 {
    u64::from(a < b)
}

/// `[x >= 0]` for the signed view.
pub fn drelu(p: u64, x: u64) -> u64 {
    u64::from(signed(p, x) >= 0)
}

pub fn relu(p: u64, x: u64) -> u64 {
    if signed(p, x) >= 0 {
        x
    } else {
        0
    }
}

/// Maximum of the signed views.
pub fn max(p: u64, xs: &[u64]) -> u64 {
    *xs.iter().max_by_key(|&&x| signed(p, x)).expect("empty window")
}

/// Acceptance tolerance attached to a protocol output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    Exact,
    /// `got - want` (signed) is 0 or 1
    TruncUlp,
    /// absolute error on decoded fixed-point values
    Absolute(f64),
}

impl Tolerance {
    pub fn check_field(&self, p: u64, got: u64, want: u64) -> bool {
        match self {
            Tolerance::Exact => got == want,
            Tolerance::TruncUlp => {
                let diff = signed(p, from_signed(p, got as i128 - want as i128));
                diff == 0 || diff == 1
            }
            Tolerance::Absolute(_) => false,
        }
    }

    pub fn check_real(&self, got: f64, want: f64) -> bool {
        match self {
            Tolerance::Absolute(t) => (got - want).abs() <= *t,
            Tolerance::Exact => got == want,
            Tolerance::TruncUlp => false,
        }
    }
}

/// Reference output of a named functionality. Inputs are canonical residues.
///
/// - `pmult`, `xor`, `less_than`: two equal-length vectors, element-wise
/// - `degree_trans`, `pack_trans`, `drelu`, `relu`: one vector, element-wise
/// - `vec_mat_mult`, `vec_mat_mult_trunc`: the vector, then the matrix rows
/// - `pre_mult`, `pre_or`: one sequence
/// - `maxpool`: one window per input vector
pub fn functionality_oracle(name: &str, p: u64, ell_x: u32, inputs: &[Vec<u64>]) -> Result<Vec<u64>> {
    let arg = |i: usize| -> Result<&Vec<u64>> {
        inputs.get(i).ok_or_else(|| Error::ShapeMismatch(format!("{name} needs input {i}")))
    };
    Ok(match name {
        "pmult" => arg(0)?.iter().zip(arg(1)?).map(|(a, b)| mul(p, *a, *b)).collect(),
        "xor" => arg(0)?.iter().zip(arg(1)?).map(|(a, b)| xor(*a, *b)).collect(),
        "less_than" => arg(0)?.iter().zip(arg(1)?).map(|(a, b)| less_than(*a, *b)).collect(),
        "degree_trans" | "pack_trans" => arg(0)?.clone(),
        "drelu" => arg(0)?.iter().map(|&x| drelu(p, x)).collect(),
        "relu" => arg(0)?.iter().map(|&x| relu(p, x)).collect(),
        "vec_mat_mult" => vec_mat(p, arg(0)?, &inputs[1..]),
        "vec_mat_mult_trunc" => vec_mat_trunc(p, ell_x, arg(0)?, &inputs[1..]),
        "pre_mult" => prefix_products(p, arg(0)?),
        "pre_or" => prefix_or(arg(0)?),
        "maxpool" => inputs.iter().map(|w| max(p, w)).collect(),
        other => return Err(Error::UnknownFunctionality(other.to_string())),
    })
}

/// Numeric type the reference pipeline runs on.
trait Num: Copy + Default + PartialOrd + std::ops::Add<Output = Self> {
    fn mul_acc(acc: Self, a: Self, b: Self) -> Self;
    /// rescale after a multiply-accumulate
    fn rescale(self, ell_x: u32) -> Self;
}

impl Num for i128 {
    fn mul_acc(acc: Self, a: Self, b: Self) -> Self {
        acc + a * b
    }
    fn rescale(self, ell_x: u32) -> Self {
        self >> ell_x
    }
}

impl Num for f64 {
    fn mul_acc(acc: Self, a: Self, b: Self) -> Self {
        acc + a * b
    }
    fn rescale(self, _: u32) -> Self {
        self
    }
}

fn run_model<T: Num>(model: &Model, input: Vec<T>, weights: &[(Vec<T>, Vec<T>)]) -> Result<Vec<T>> {
    model.validate()?;
    let ell_x = model.manifest.ell_x;
    if input.len() != model.manifest.input.len() {
        return Err(Error::ShapeMismatch(format!("input of {} values", input.len())));
    }
    let mut shape = model.manifest.input;
    let mut x = input;
    for (l, (w, b)) in model.manifest.layers.iter().zip(weights) {
        let next = l.output_shape(shape)?;
        x = match (*l, shape, next) {
            (LayerSpec::Conv { f_w, f_h, c_i, c_o, stride, padding }, Shape::Image { h, w: wi, .. }, Shape::Image { h: ho, w: wo, .. }) => {
                let kk = f_w * f_h * c_i;
                let mut out = Vec::with_capacity(ho * wo * c_o);
                for oy in 0..ho {
                    for ox in 0..wo {
                        for o in 0..c_o {
                            let mut acc = T::default();
                            for dy in 0..f_h {
                                for dx in 0..f_w {
                                    let iy = (oy * stride + dy) as isize - padding as isize;
                                    let ix = (ox * stride + dx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wi {
                                        continue;
                                    }
                                    for c in 0..c_i {
                                        let xv = x[(iy as usize * wi + ix as usize) * c_i + c];
                                        acc = T::mul_acc(acc, xv, w[o * kk + (dy * f_w + dx) * c_i + c]);
                                    }
                                }
                            }
                            out.push(acc.rescale(ell_x));
                        }
                    }
                }
                out
            }
            (LayerSpec::Fc { inputs, outputs }, _, _) => (0..outputs)
                .map(|o| {
                    let acc = (0..inputs).fold(T::default(), |acc, i| T::mul_acc(acc, x[i], w[i * outputs + o]));
                    acc.rescale(ell_x) + b[o]
                })
                .collect(),
            (LayerSpec::Relu, _, _) => x.into_iter().map(|v| if v > T::default() { v } else { T::default() }).collect(),
            (LayerSpec::MaxPool { window }, Shape::Image { w, c, .. }, Shape::Image { h: ho, w: wo, .. }) => {
                let mut out = Vec::with_capacity(ho * wo * c);
                for oy in 0..ho {
                    for ox in 0..wo {
                        for ch in 0..c {
                            let mut best: Option<T> = None;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let v = x[((oy * window + dy) * w + ox * window + dx) * c + ch];
                                    if best.map_or(true, |b| v > b) {
                                        best = Some(v);
                                    }
                                }
                            }
                            out.push(best.unwrap());
                        }
                    }
                }
                out
            }
            (LayerSpec::Flatten, _, _) => x,
            _ => return Err(Error::ShapeMismatch("layer does not fit its input".into())),
        };
        shape = next;
    }
    Ok(x)
}

/// Fixed-point inference with the secure pipeline's rounding schedule: every
/// Conv and FC output is floored by `2^ell_x` right after its
/// multiply-accumulate, then the FC bias is added. Returns encoded outputs.
pub fn plaintext_infer(model: &Model, input: &[f64]) -> Result<Vec<i64>> {
    let codec = model.manifest.codec()?;
    let enc = |xs: &[f64]| -> Result<Vec<i128>> { xs.iter().map(|&v| codec.encode_int(v).map(i128::from)).collect() };
    let weights = model.params.iter().map(|p| Ok((enc(&p.weights)?, enc(&p.bias)?))).collect::<Result<Vec<_>>>()?;
    let out = run_model(model, enc(input)?, &weights)?;
    let bound = 1i128 << (model.manifest.ell - 2);
    out.into_iter()
        .map(|v| if v.abs() < bound { Ok(v as i64) } else { Err(Error::OutOfRange(format!("output {v} exceeds 2^(ell-2)"))) })
        .collect()
}

/// Double-precision inference without any rounding.
pub fn float_infer(model: &Model, input: &[f64]) -> Result<Vec<f64>> {
    let weights: Vec<(Vec<f64>, Vec<f64>)> = model.params.iter().map(|p| (p.weights.clone(), p.bias.clone())).collect();
    run_model(model, input.to_vec(), &weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u64 = (1 << 31) - 1;

    #[test]
    fn signed_helpers() {
        assert_eq!(signed(P, P - 1), -1);
        assert_eq!(from_signed(P, -1), P - 1);
        assert_eq!(trunc(P, from_signed(P, -3), 1), from_signed(P, -2));
        assert_eq!(trunc(P, 7, 1), 3);
    }

    #[test]
    fn dispatcher() {
        assert_eq!(functionality_oracle("pre_or", P, 13, &[vec![0, 1, 0]]).unwrap(), vec![0, 1, 1]);
        assert_eq!(functionality_oracle("relu", P, 13, &[vec![P - 1, 5]]).unwrap(), vec![0, 5]);
        assert_eq!(functionality_oracle("vec_mat_mult", P, 13, &[vec![1, 2], vec![3, 4], vec![5, 6]]).unwrap(), vec![13, 16]);
        assert_eq!(functionality_oracle("maxpool", P, 13, &[vec![P - 4, 2, P - 1]]).unwrap(), vec![2]);
        assert!(matches!(functionality_oracle("softmax", P, 13, &[]), Err(Error::UnknownFunctionality(_))));
    }

    #[test]
    fn tolerances() {
        assert!(Tolerance::TruncUlp.check_field(P, 5, 4));
        assert!(Tolerance::TruncUlp.check_field(P, 0, P - 1));
        assert!(!Tolerance::TruncUlp.check_field(P, 3, 4));
        assert!(Tolerance::Absolute(0.01).check_real(1.005, 1.0));
    }
}
