//! Convolution blocks registered in a [`ParamStore`].

use alloc::format;

use super::graph::Var;
use super::linalg::ConvGeom;
use super::params::{uniform_init, Ctx, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Same-size 3×3 geometry.
pub const SAME_3X3: ConvGeom = ConvGeom {
    stride: (1, 1),
    padding: (1, 1),
    dilation: (1, 1),
    output_padding: (0, 0),
};

/// Convolution (or transposed convolution) followed by batch normalization
/// and ELU. The convolution has no bias of its own; batchnorm's shift takes
/// that role.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock {
    pub w: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub geom: ConvGeom,
    pub transposed: bool,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
        transposed: bool,
    ) -> Result<Self> {
        let shape = if transposed {
            [c_in, c_out, kernel.0, kernel.1]
        } else {
            [c_out, c_in, kernel.0, kernel.1]
        };
        let bound = 1.0 / ((c_in * kernel.0 * kernel.1) as f64).sqrt();
        let wname = format!("{name}.w");
        let w = store.add_param(&wname, uniform_init(&shape, bound, seed, &wname))?;
        let gamma = store.add_param(&format!("{name}.bn.gamma"), Tensor::full(&[c_out], S::one()))?;
        let beta = store.add_param(&format!("{name}.bn.beta"), Tensor::zeros(&[c_out]))?;
        let running_mean = store.add_buffer(&format!("{name}.bn.mean"), Tensor::zeros(&[c_out]))?;
        let running_var = store.add_buffer(&format!("{name}.bn.var"), Tensor::full(&[c_out], S::one()))?;
        Ok(Self { w, gamma, beta, running_mean, running_var, geom, transposed })
    }

    /// Shape-preserving 3×3 convolution block.
    pub fn same<S: Scalar>(store: &mut ParamStore<S>, seed: u64, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Self::register(store, seed, name, c_in, c_out, (3, 3), SAME_3X3, false)
    }

    /// Shape-preserving 3×3 transposed-convolution block.
    pub fn same_transposed<S: Scalar>(store: &mut ParamStore<S>, seed: u64, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Self::register(store, seed, name, c_in, c_out, (3, 3), SAME_3X3, true)
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Result<Var> {
        let w = ctx.param(self.w);
        let y = if self.transposed {
            ctx.graph.deconv2d(x, w, None, self.geom)?
        } else {
            ctx.graph.conv2d(x, w, None, self.geom)?
        };
        let y = ctx.batchnorm(y, self.gamma, self.beta, self.running_mean, self.running_var)?;
        Ok(ctx.graph.elu(y))
    }
}

/// Bare convolution (or transposed convolution) with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
    pub transposed: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
        transposed: bool,
    ) -> Result<Self> {
        let shape = if transposed {
            [c_in, c_out, kernel.0, kernel.1]
        } else {
            [c_out, c_in, kernel.0, kernel.1]
        };
        let bound = 1.0 / ((c_in * kernel.0 * kernel.1) as f64).sqrt();
        let (wname, bname) = (format!("{name}.w"), format!("{name}.b"));
        let w = store.add_param(&wname, uniform_init(&shape, bound, seed, &wname))?;
        let b = store.add_param(&bname, uniform_init(&[c_out], bound, seed, &bname))?;
        Ok(Self { w, b, geom, transposed })
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w), ctx.param(self.b));
        if self.transposed {
            ctx.graph.deconv2d(x, w, Some(b), self.geom)
        } else {
            ctx.graph.conv2d(x, w, Some(b), self.geom)
        }
    }
}
