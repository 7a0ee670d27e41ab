//! Forward dynamics of the four recurrent architectures.
//!
//! Every architecture uses `tanh` in the hidden state and a linear readout.
//! `ForwardTrace::y` holds the readout before any output link; the link
//! (identity, sigmoid or softmax) belongs to the loss.

mod lmn;
mod mslmn;
mod rnn;
mod urnn;

pub use lmn::{rnn_to_lmn, LmnParams, Readout};
pub use mslmn::{active_modules, max_modules, MslmnParams};
pub use rnn::RnnParams;
pub use urnn::UrnnParams;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::numerics::Matrix;

/// States recorded during a forward pass, one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Hidden states `h^t`, `len × N_h`.
    pub h: Matrix,
    /// Memory states `m^t` (concatenated modules for MS-LMN); `None` for
    /// architectures without a separate memory.
    pub m: Option<Matrix>,
    /// Readouts `y^t`, `len × N_y`.
    pub y: Matrix,
    /// MS-LMN only: the largest active module index per timestep.
    pub active: Option<Vec<usize>>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }

    /// Largest absolute difference over every recorded state.
    pub fn max_abs_diff(&self, other: &ForwardTrace) -> f64 {
        let mut d = self.h.max_abs_diff(&other.h).max(self.y.max_abs_diff(&other.y));
        if let (Some(a), Some(b)) = (&self.m, &other.m) {
            d = d.max(a.max_abs_diff(b));
        }
        d
    }
}

/// Common interface of the parameter bundles.
pub trait Recurrent {
    fn input_size(&self) -> usize;
    fn output_size(&self) -> usize;
    fn forward(&self, x: &Matrix) -> Result<ForwardTrace>;
    /// Every trainable tensor with a stable name, in a fixed order.
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    /// Mutable view in the same order as [`Recurrent::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
    /// Re-imposes structural constraints after an update.
    fn enforce_structure(&mut self) {}

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn check_input(context: &'static str, n_x: usize, x: &Matrix) -> Result<()> {
    if x.cols() != n_x {
        return Err(LmnError::shape(context, format!("{n_x} input features"), x.cols()));
    }
    Ok(())
}

pub(crate) fn check_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(LmnError::Shape {
            context: "parameter shape",
            expected: format!("{name}: {rows}x{cols}"),
            found: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    Ok(())
}

/// Uniform `±1/√fan_in` initialization (zero-width tensors stay empty).
pub(crate) fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

#[inline]
pub(crate) fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|a| *a = a.tanh());
}

/// Any of the supported architectures.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Rnn(RnnParams),
    Lmn(LmnParams),
    Urnn(UrnnParams),
    Mslmn(MslmnParams),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            ModelParams::Rnn($m) => $body,
            ModelParams::Lmn($m) => $body,
            ModelParams::Urnn($m) => $body,
            ModelParams::Mslmn($m) => $body,
        }
    };
}

impl Recurrent for ModelParams {
    fn input_size(&self) -> usize {
        dispatch!(self, m => m.input_size())
    }
    fn output_size(&self) -> usize {
        dispatch!(self, m => m.output_size())
    }
    fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        dispatch!(self, m => m.forward(x))
    }
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        dispatch!(self, m => m.tensors())
    }
    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        dispatch!(self, m => m.tensors_mut())
    }
    fn enforce_structure(&mut self) {
        dispatch!(self, m => m.enforce_structure())
    }
}

impl ModelParams {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelParams::Rnn(_) => "rnn",
            ModelParams::Lmn(_) => "lmn",
            ModelParams::Urnn(_) => "urnn",
            ModelParams::Mslmn(_) => "mslmn",
        }
    }

    /// Architecture descriptor matching this bundle's sizes.
    pub fn arch(&self) -> ArchSpec {
        match self {
            ModelParams::Rnn(p) => ArchSpec::Rnn {
                n_x: p.w_xh.cols(),
                n_h: p.w_hh.rows(),
                n_y: p.w_hy.rows(),
            },
            ModelParams::Lmn(p) => ArchSpec::Lmn {
                n_x: p.w_xh.cols(),
                n_h: p.w_xh.rows(),
                n_m: p.w_mm.rows(),
                n_y: p.w_out.rows(),
                readout: p.readout,
            },
            ModelParams::Urnn(p) => ArchSpec::Urnn {
                n_x: p.w_xh.cols(),
                n_h: p.w_xh.rows(),
                n_y: p.b_y.rows(),
                k: p.k(),
            },
            ModelParams::Mslmn(p) => ArchSpec::Mslmn {
                n_x: p.w_xh.cols(),
                n_h: p.w_xh.rows(),
                module_size: p.module_size(),
                modules: p.modules(),
                n_y: p.w_my.rows(),
            },
        }
    }
}

impl From<RnnParams> for ModelParams {
    fn from(p: RnnParams) -> Self {
        ModelParams::Rnn(p)
    }
}
impl From<LmnParams> for ModelParams {
    fn from(p: LmnParams) -> Self {
        ModelParams::Lmn(p)
    }
}
impl From<UrnnParams> for ModelParams {
    fn from(p: UrnnParams) -> Self {
        ModelParams::Urnn(p)
    }
}
impl From<MslmnParams> for ModelParams {
    fn from(p: MslmnParams) -> Self {
        ModelParams::Mslmn(p)
    }
}

/// Fully specified architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchSpec {
    Rnn {
        n_x: usize,
        n_h: usize,
        n_y: usize,
    },
    Lmn {
        n_x: usize,
        n_h: usize,
        n_m: usize,
        n_y: usize,
        #[serde(default)]
        readout: Readout,
    },
    Urnn {
        n_x: usize,
        n_h: usize,
        n_y: usize,
        k: usize,
    },
    Mslmn {
        n_x: usize,
        n_h: usize,
        module_size: usize,
        modules: usize,
        n_y: usize,
    },
}

impl ArchSpec {
    /// Trainable scalars, counting one bias vector for the hidden state,
    /// for each memory module and for the output.
    pub fn count_params(&self) -> usize {
        match *self {
            ArchSpec::Rnn { n_x, n_h, n_y } => n_h * n_x + n_h * n_h + n_y * n_h + n_h + n_y,
            ArchSpec::Lmn {
                n_x,
                n_h,
                n_m,
                n_y,
                readout,
            } => {
                let out = match readout {
                    Readout::Memory => n_y * n_m,
                    Readout::Hidden => n_y * n_h,
                };
                n_h * n_x + n_h * n_m + n_m * n_h + n_m * n_m + out + n_h + n_m + n_y
            }
            ArchSpec::Urnn { n_x, n_h, n_y, k } => {
                n_h * n_x + k * n_h * n_h + (k + 1) * n_y * n_h + n_h + n_y
            }
            ArchSpec::Mslmn {
                n_x,
                n_h,
                module_size,
                modules,
                n_y,
            } => {
                let total = module_size * modules;
                let recurrent_blocks = modules * (modules + 1) / 2;
                n_h * n_x
                    + 2 * n_h * total
                    + recurrent_blocks * module_size * module_size
                    + n_y * total
                    + n_h
                    + total
                    + n_y
            }
        }
    }

    /// Randomly initialized parameters of this shape.
    pub fn build_random(&self, rng: &mut impl Rng) -> Result<ModelParams> {
        Ok(match *self {
            ArchSpec::Rnn { n_x, n_h, n_y } => RnnParams::random(n_x, n_h, n_y, rng).into(),
            ArchSpec::Lmn {
                n_x,
                n_h,
                n_m,
                n_y,
                readout,
            } => LmnParams::random(n_x, n_h, n_m, n_y, readout, rng).into(),
            ArchSpec::Urnn { n_x, n_h, n_y, k } => UrnnParams::random(n_x, n_h, n_y, k, rng)?.into(),
            ArchSpec::Mslmn {
                n_x,
                n_h,
                module_size,
                modules,
                n_y,
            } => MslmnParams::random(n_x, n_h, module_size, modules, n_y, rng)?.into(),
        })
    }
}

/// Parameter count of an architecture descriptor.
pub fn count_params(arch: &ArchSpec) -> usize {
    arch.count_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within(count: usize, budget: usize, tol: f64) -> bool {
        (count as f64 - budget as f64).abs() <= tol * budget as f64
    }

    #[test]
    fn table_budget_examples() {
        let rnn = ArchSpec::Rnn { n_x: 0, n_h: 31, n_y: 1 };
        assert_eq!(rnn.count_params(), 1024);
        assert!(within(rnn.count_params(), 1000, 0.05));
        let lmn = ArchSpec::Lmn { n_x: 0, n_h: 2, n_m: 29, n_y: 1, readout: Readout::Memory };
        assert!(within(lmn.count_params(), 1000, 0.05));
    }

    #[test]
    fn zero_sizes_count_zero() {
        for arch in [
            ArchSpec::Rnn { n_x: 0, n_h: 0, n_y: 0 },
            ArchSpec::Lmn { n_x: 0, n_h: 0, n_m: 0, n_y: 0, readout: Readout::Memory },
            ArchSpec::Urnn { n_x: 0, n_h: 0, n_y: 0, k: 0 },
            ArchSpec::Mslmn { n_x: 0, n_h: 0, module_size: 0, modules: 0, n_y: 0 },
        ] {
            assert_eq!(count_params(&arch), 0);
        }
    }

    #[test]
    fn counts_match_built_tensors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        for arch in [
            ArchSpec::Rnn { n_x: 3, n_h: 5, n_y: 2 },
            ArchSpec::Lmn { n_x: 3, n_h: 4, n_m: 6, n_y: 2, readout: Readout::Memory },
            ArchSpec::Lmn { n_x: 3, n_h: 4, n_m: 6, n_y: 2, readout: Readout::Hidden },
            ArchSpec::Urnn { n_x: 2, n_h: 3, n_y: 2, k: 3 },
            ArchSpec::Mslmn { n_x: 2, n_h: 3, module_size: 2, modules: 3, n_y: 2 },
        ] {
            let model = arch.build_random(&mut rng).unwrap();
            let structural = match &model {
                ModelParams::Mslmn(p) => p.structural_zero_count(),
                _ => 0,
            };
            assert_eq!(model.num_params() - structural, arch.count_params(), "{arch:?}");
            assert_eq!(model.arch(), arch);
        }
    }
}
