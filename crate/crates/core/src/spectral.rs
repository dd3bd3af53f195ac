//! Finite-mode Galerkin surrogate of the Stokes operator and the convection term.
//!
//! `A` is diagonal with eigenvalues `λ_1 ≤ … ≤ λ_N`. The trilinear form is
//! `b(u, v, w) = Σ c_ijk u_i v_j w_k` with `c_ijk = -c_ikj`. Each stored entry
//! carries both orientations of its last two slots, so `b(u, v, v)` evaluates
//! to exactly zero in floating point.

use std::collections::BTreeMap;
use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StokesSpectrum {
    lambdas: Vec<f64>,
}

impl StokesSpectrum {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() > 1024 {
            return Err(Error::config("spectrum", format!("mode count must be in 1..=1024, got {}", lambdas.len())));
        }
        for (k, &l) in lambdas.iter().enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config(format!("spectrum[{k}]"), format!("eigenvalue must be positive, got {l}")));
            }
            if k > 0 && l < lambdas[k - 1] {
                return Err(Error::config(format!("spectrum[{k}]"), "eigenvalues must be nondecreasing"));
            }
        }
        Ok(Self { lambdas })
    }

    /// `λ_k = λ_1 k^{2/3}`, the growth of Stokes eigenvalues in three dimensions.
    pub fn weyl(modes: usize, lambda1: f64) -> Result<Self> {
        Self::new((1..=modes).map(|k| lambda1 * (k as f64).powf(2.0 / 3.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambda1(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.lambdas.last().unwrap()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambdas
    }
}

/// Galerkin coefficients of a velocity field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralField(pub Vec<f64>);

impl SpectralField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn unit(n: usize, k: usize) -> Self {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn h_norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn h_norm(&self) -> f64 {
        self.h_norm_sq().sqrt()
    }

    pub fn dot(&self, other: &SpectralField) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self(self.0.iter().map(|x| a * x).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Index<usize> for SpectralField {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl IndexMut<usize> for SpectralField {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.0[k]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|u|`.
pub fn h_norm(u: &SpectralField) -> f64 {
    u.h_norm()
}

/// `Σ λ_k u_k²` without the dimension check.
pub(crate) fn v_norm_sq_raw(u: &[f64], lambdas: &[f64]) -> f64 {
    u.iter().zip(lambdas).map(|(x, l)| l * x * x).sum()
}

pub fn v_norm_sq(u: &SpectralField, spec: &StokesSpectrum) -> Result<f64> {
    check_dim(spec.len(), u.len())?;
    Ok(v_norm_sq_raw(&u.0, &spec.lambdas))
}

/// `‖u‖ = (Σ λ_k u_k²)^{1/2}`.
pub fn v_norm(u: &SpectralField, spec: &StokesSpectrum) -> Result<f64> {
    v_norm_sq(u, spec).map(f64::sqrt)
}

/// `(Au)_k = λ_k u_k`.
pub fn apply_stokes(u: &SpectralField, spec: &StokesSpectrum) -> Result<SpectralField> {
    check_dim(spec.len(), u.len())?;
    Ok(SpectralField(u.0.iter().zip(&spec.lambdas).map(|(x, l)| l * x).collect()))
}

/// One structure constant `c_{i j k} = value` (and implicitly `c_{i k j} = -value`), `j < k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Triad {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

/// Structure constants of the discrete convection term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvectionTensor {
    modes: usize,
    triads: Vec<Triad>,
}

impl ConvectionTensor {
    pub fn zero(modes: usize) -> Self {
        Self { modes, triads: Vec::new() }
    }

    /// Builds the tensor from raw `(i, j, k, c)` entries.
    ///
    /// Every entry contributes `c` to `c_ijk` and `-c` to `c_ikj`. Entries with
    /// `j == k` are rejected: antisymmetry forces them to vanish.
    pub fn from_entries(modes: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut canon: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for &(i, j, k, c) in entries {
            if i >= modes || j >= modes || k >= modes {
                return Err(Error::config("tensor", format!("index ({i},{j},{k}) outside 0..{modes}")));
            }
            if !c.is_finite() {
                return Err(Error::config("tensor", format!("non-finite coefficient at ({i},{j},{k})")));
            }
            if j == k {
                if c != 0.0 {
                    return Err(Error::config(
                        "tensor",
                        format!("entry ({i},{j},{k}) repeats its last two slots and must be zero"),
                    ));
                }
                continue;
            }
            let (key, val) = if j < k { ((i, j, k), c) } else { ((i, k, j), -c) };
            *canon.entry(key).or_insert(0.0) += val;
        }
        let triads = canon
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|((i, j, k), value)| Triad { i, j, k, value })
            .collect();
        Ok(Self { modes, triads })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn triads(&self) -> &[Triad] {
        &self.triads
    }

    pub fn is_zero(&self) -> bool {
        self.triads.is_empty()
    }

    /// Dense `c_ijk` lookup; `O(entries)`.
    pub fn coefficient(&self, i: usize, j: usize, k: usize) -> f64 {
        self.triads
            .iter()
            .map(|t| {
                if t.i != i {
                    0.0
                } else if t.j == j && t.k == k {
                    t.value
                } else if t.j == k && t.k == j {
                    -t.value
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Both orientations of every stored triad, as `(i, j, k, c)` rows.
    pub fn expanded_entries(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.triads.len());
        for t in &self.triads {
            out.push((t.i, t.j, t.k, t.value));
            out.push((t.i, t.k, t.j, -t.value));
        }
        out
    }

    pub(crate) fn b_raw(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        self.triads
            .iter()
            .map(|t| t.value * u[t.i] * (v[t.j] * w[t.k] - v[t.k] * w[t.j]))
            .sum()
    }

    /// Writes `B(u, v)` into `out`, where `⟨B(u,v), w⟩ = b(u, v, w)`.
    pub(crate) fn convection_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for t in &self.triads {
            let cu = t.value * u[t.i];
            out[t.k] += cu * v[t.j];
            out[t.j] -= cu * v[t.k];
        }
    }
}

/// `b(u, v, w)`.
pub fn b_form(tensor: &ConvectionTensor, u: &SpectralField, v: &SpectralField, w: &SpectralField) -> Result<f64> {
    for f in [u, v, w] {
        check_dim(tensor.modes, f.len())?;
    }
    Ok(tensor.b_raw(&u.0, &v.0, &w.0))
}

/// `B(u, v)`.
pub fn apply_convection(tensor: &ConvectionTensor, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    check_dim(tensor.modes, u.len())?;
    check_dim(tensor.modes, v.len())?;
    let mut out = vec![0.0; tensor.modes];
    tensor.convection_into(&u.0, &v.0, &mut out);
    Ok(SpectralField(out))
}

/// Built-in convection tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinTensor {
    /// No nonlinearity; the dynamics are linear.
    Zero,
    /// A single triad coupling the first three modes.
    Triad,
    /// Nearest-neighbour triads `(k-1, k, k+1)` with weights growing like `λ_k^{1/2}`.
    ShellLike,
}

impl std::str::FromStr for BuiltinTensor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "triad" => Ok(Self::Triad),
            "shell-like" => Ok(Self::ShellLike),
            other => Err(Error::config("tensor", format!("unknown tensor `{other}` (zero | triad | shell-like)"))),
        }
    }
}

pub fn builtin_tensor(kind: BuiltinTensor, spec: &StokesSpectrum) -> Result<ConvectionTensor> {
    let n = spec.len();
    match kind {
        BuiltinTensor::Zero => Ok(ConvectionTensor::zero(n)),
        BuiltinTensor::Triad => {
            if n < 3 {
                return Err(Error::config("tensor", "triad tensor needs at least 3 modes"));
            }
            ConvectionTensor::from_entries(n, &[(0, 1, 2, 1.0)])
        }
        BuiltinTensor::ShellLike => {
            if n < 3 {
                return Err(Error::config("tensor", "shell-like tensor needs at least 3 modes"));
            }
            let l = spec.eigenvalues();
            let mut entries = Vec::new();
            for m in 1..n - 1 {
                let (a, b, c) = (m - 1, m, m + 1);
                let g = l[m].sqrt();
                entries.push((a, b, c, g));
                entries.push((b, a, c, -0.5 * g));
                entries.push((c, a, b, -0.5 * g));
            }
            ConvectionTensor::from_entries(n, &entries)
        }
    }
}

/// Looks a built-in tensor up by name (`zero`, `triad`, `shell-like`).
pub fn builtin_tensors(name: &str, spec: &StokesSpectrum) -> Result<ConvectionTensor> {
    builtin_tensor(name.parse()?, spec)
}
