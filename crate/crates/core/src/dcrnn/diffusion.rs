//! Random-walk diffusion convolution over a (masked) adjacency.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// D⁻¹A. Rows with zero degree stay zero.
pub fn transition_matrix(adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if adjacency.nrows() != adjacency.ncols() {
        return Err(Error::Shape("adjacency must be square".into()));
    }
    if adjacency.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("adjacency entries must be finite and non-negative".into()));
    }
    let mut out = adjacency.clone();
    for i in 0..out.nrows() {
        let deg: f64 = out.row(i).sum();
        if deg > 0.0 {
            out.row_mut(i).scale_mut(1.0 / deg);
        }
    }
    Ok(out)
}

/// Filter coefficients θ_0..θ_{K−1} for every (input channel, output channel)
/// pair, stacked as a `(K · C_in) × C_out` matrix whose row `k · C_in + c`
/// holds θ_k for input channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFilter {
    pub k_max: usize,
    pub in_channels: usize,
    pub weights: DMatrix<f64>,
}

impl DiffusionFilter {
    pub fn new(k_max: usize, in_channels: usize, weights: DMatrix<f64>) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::InvalidInput("diffusion order K must be >= 1".into()));
        }
        if weights.nrows() != k_max * in_channels {
            return Err(Error::Shape(format!(
                "filter has {} rows, expected K*C = {}",
                weights.nrows(),
                k_max * in_channels
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter coefficients".into()));
        }
        Ok(Self {
            k_max,
            in_channels,
            weights,
        })
    }

    pub fn zeros(k_max: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            k_max,
            in_channels,
            weights: DMatrix::zeros(k_max * in_channels, out_channels),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.ncols()
    }

    /// θ_k as a `C_in × C_out` block.
    pub fn theta(&self, k: usize) -> DMatrix<f64> {
        self.weights.rows(k * self.in_channels, self.in_channels).into_owned()
    }
}

/// `[X, P X, …, P^{K−1} X]` as one `N × (K · C)` matrix.
pub fn diffusion_stack(transition: &DMatrix<f64>, x: &DMatrix<f64>, k_max: usize) -> DMatrix<f64> {
    let (n, c) = x.shape();
    let mut stack = DMatrix::zeros(n, k_max * c);
    stack.columns_mut(0, c).copy_from(x);
    let mut cur = x.clone();
    for k in 1..k_max {
        cur = transition * &cur;
        stack.columns_mut(k * c, c).copy_from(&cur);
    }
    stack
}

/// Pulls a gradient on the stack back to a gradient on X.
pub fn diffusion_stack_backward(transition: &DMatrix<f64>, d_stack: &DMatrix<f64>, k_max: usize, c: usize) -> DMatrix<f64> {
    let mut g = d_stack.columns((k_max - 1) * c, c).into_owned();
    for k in (0..k_max - 1).rev() {
        g = d_stack.columns(k * c, c) + transition.transpose() * g;
    }
    g
}

/// Σ_k θ_k (D⁻¹A)^k X, summed over input channels.
pub fn diffusion_conv(x: &DMatrix<f64>, adjacency: &DMatrix<f64>, filter: &DiffusionFilter) -> Result<DMatrix<f64>> {
    if adjacency.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "signal has {} nodes, adjacency {}",
            x.nrows(),
            adjacency.nrows()
        )));
    }
    if x.ncols() != filter.in_channels {
        return Err(Error::Shape(format!(
            "signal has {} channels, filter expects {}",
            x.ncols(),
            filter.in_channels
        )));
    }
    let p = transition_matrix(adjacency)?;
    Ok(diffusion_stack(&p, x, filter.k_max) * &filter.weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_examples() {
        assert_eq!(transition_matrix(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        assert_eq!(
            transition_matrix(&a).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0])
        );
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 3.0]);
        let p = transition_matrix(&z).unwrap();
        assert!(p.row(0).iter().all(|&v| v == 0.0));
        assert!(transition_matrix(&DMatrix::from_element(1, 1, -1.0)).is_err());
    }

    #[test]
    fn conv_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let chain = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let f = DiffusionFilter::new(2, 1, DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert_eq!(diffusion_conv(&x, &chain, &f).unwrap(), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));

        let f = DiffusionFilter::new(2, 1, DMatrix::from_column_slice(2, 1, &[0.3, 0.5])).unwrap();
        let y = diffusion_conv(&x, &DMatrix::identity(2, 2), &f).unwrap();
        assert!((y[(0, 0)] - 0.8).abs() < 1e-15);

        let k1 = DiffusionFilter::new(1, 1, DMatrix::from_element(1, 1, 2.5)).unwrap();
        assert_eq!(diffusion_conv(&x, &chain, &k1).unwrap(), &x * 2.5);

        assert!(diffusion_conv(&DMatrix::zeros(3, 1), &chain, &k1).is_err());
        assert!(DiffusionFilter::new(0, 1, DMatrix::zeros(0, 1)).is_err());
    }
}
