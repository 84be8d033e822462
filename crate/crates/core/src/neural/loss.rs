use ndarray::{Array2, ArrayView2, Zip};

use super::dense::sigmoid;
use super::vae::PROB_CLAMP;
use super::LossValue;
use crate::error::{Error, Result};
use crate::linalg::{trace_form, Orthogonalized};
use crate::model::{DataMatrix, DataType};

/// Gradients with respect to the row and column factors.
#[derive(Debug, Clone)]
pub struct FactorGrads {
    pub u_r: Array2<f64>,
    pub u_c: Array2<f64>,
}

pub fn loss_matrix_recon(x: &DataMatrix, u_r: ArrayView2<f64>, u_c: ArrayView2<f64>) -> Result<LossValue<FactorGrads>> {
    loss_matrix_recon_of(x.values.view(), x.datatype, u_r, u_c)
}

/// Residual norms at or below this fraction of `‖X‖_F` count as an exact fit.
pub const EXACT_FIT: f64 = 1e-12;

/// Frobenius norm of the error `X − u_r·u_cᵀ` for real data, mean BCE of
/// `sigmoid(u_r·u_cᵀ)` for binary data.
pub fn loss_matrix_recon_of(
    x: ArrayView2<f64>,
    datatype: DataType,
    u_r: ArrayView2<f64>,
    u_c: ArrayView2<f64>,
) -> Result<LossValue<FactorGrads>> {
    if u_r.ncols() != u_c.ncols() || x.dim() != (u_r.nrows(), u_c.nrows()) {
        return Err(Error::ShapeMismatch(format!(
            "X {:?} from factors {:?} and {:?}",
            x.dim(),
            u_r.dim(),
            u_c.dim()
        )));
    }
    let recon = u_r.dot(&u_c.t());
    let mut g = Array2::zeros(recon.dim());
    let value = match datatype {
        DataType::Real => {
            let mut acc = 0.0;
            let mut scale = 0.0;
            Zip::from(&mut g).and(&recon).and(x).for_each(|g, &r, &t| {
                acc += (r - t) * (r - t);
                scale += t * t;
                *g = r - t;
            });
            let norm = acc.sqrt();
            // below rounding level the residual direction is noise; 0 is a
            // valid subgradient at the minimum
            if norm <= EXACT_FIT * scale.sqrt().max(1.0) {
                g.fill(0.0);
            } else {
                g /= norm;
            }
            norm
        }
        DataType::Binary => {
            let n = x.len() as f64;
            let mut acc = 0.0;
            Zip::from(&mut g).and(&recon).and(x).for_each(|g, &r, &t| {
                let s = sigmoid(r);
                let pc = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                acc -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
                *g = (pc - t) / (pc * (1.0 - pc)) * s * (1.0 - s) / n;
            });
            acc / n
        }
    };
    if !value.is_finite() {
        return Err(Error::NumericalDivergence(format!("reconstruction loss {value}")));
    }
    Ok(LossValue {
        value,
        grads: FactorGrads {
            u_r: g.dot(&u_c),
            u_c: g.t().dot(&u_r),
        },
    })
}

/// `Tr(CᵀLC)` for `C = C̃·(H⁻¹)ᵀ`; the gradient is taken with respect to
/// `C̃` with the frozen map held fixed: `2·L·C·H⁻¹`.
pub fn loss_trace(ortho: &Orthogonalized, l: ArrayView2<f64>) -> Result<LossValue<Array2<f64>>> {
    let n = ortho.c.nrows();
    if l.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!("Laplacian {:?} for {n} rows", l.dim())));
    }
    let value = trace_form(ortho.c.view(), l);
    if !value.is_finite() {
        return Err(Error::NumericalDivergence(format!("trace loss {value}")));
    }
    let grad = l.dot(&ortho.c).dot(&ortho.h_inv_t.t()) * 2.0;
    Ok(LossValue { value, grads: grad })
}
