//! Complex arithmetic built from pairs of real tensors.
//!
//! Nothing here introduces new primitives: every complex operation expands
//! into real ops on the tape, so the backward pass and finite-difference
//! checks see only real values.

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(shape_err(
                "complex",
                format!("re {:?} vs im {:?}", re.shape(), im.shape()),
            ));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape.to_vec()),
            im: Tensor::zeros(shape.to_vec()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }
}

/// Real and imaginary parts of a complex value living on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl Tape {
    pub fn complex_param(&mut self, value: ComplexTensor) -> CVar {
        CVar {
            re: self.param(value.re),
            im: self.param(value.im),
        }
    }

    pub fn complex_constant(&mut self, value: ComplexTensor) -> CVar {
        CVar {
            re: self.constant(value.re),
            im: self.constant(value.im),
        }
    }

    pub fn complex_value(&self, v: CVar) -> ComplexTensor {
        ComplexTensor {
            re: self.value(v.re).clone(),
            im: self.value(v.im).clone(),
        }
    }

    pub fn complex_add(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar {
            re: self.add(a.re, b.re)?,
            im: self.add(a.im, b.im)?,
        })
    }

    pub fn complex_reshape(&mut self, x: CVar, shape: &[usize]) -> Result<CVar> {
        Ok(CVar {
            re: self.reshape(x.re, shape)?,
            im: self.reshape(x.im, shape)?,
        })
    }

    pub fn complex_permute(&mut self, x: CVar, axes: &[usize]) -> Result<CVar> {
        Ok(CVar {
            re: self.permute(x.re, axes)?,
            im: self.permute(x.im, axes)?,
        })
    }
}

/// Complex affine map along the last axis: `y = x·Wᵀ + b`.
///
/// `x` is `[rows, in]`, `w` is `[out, in]`, `b` is `[out]`. Expands to
/// `(xr·Wrᵀ − xi·Wiᵀ + br, xr·Wiᵀ + xi·Wrᵀ + bi)`.
pub fn complex_linear(tape: &mut Tape, x: CVar, w: CVar, b: Option<CVar>) -> Result<CVar> {
    let (sx, sw) = (tape.try_value(x.re)?.shape(), tape.try_value(w.re)?.shape());
    if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
        return Err(shape_err("complex_linear", format!("x {sx:?} with W {sw:?}")));
    }
    let rr = tape.matmul_t(x.re, w.re)?;
    let ii = tape.matmul_t(x.im, w.im)?;
    let ri = tape.matmul_t(x.re, w.im)?;
    let ir = tape.matmul_t(x.im, w.re)?;
    let mut re = tape.sub(rr, ii)?;
    let mut im = tape.add(ri, ir)?;
    if let Some(b) = b {
        re = tape.add_row(re, b.re)?;
        im = tape.add_row(im, b.im)?;
    }
    Ok(CVar { re, im })
}
