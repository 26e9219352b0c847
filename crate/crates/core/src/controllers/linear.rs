use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::CentralController;
use crate::error::{Error, Result};
use crate::fleet::FleetLayout;
use crate::timeline::Tick;

/// Open-loop feedforward term `v(t)` of a linear law.
pub type Feedforward = Arc<dyn Fn(Tick) -> Vec<f64> + Send + Sync>;

/// `u = −K_x x + K_z z + v(t)` over the whole fleet.
#[derive(Clone)]
pub struct LinearFeedback {
    layout: FleetLayout,
    kx: DMatrix<f64>,
    kz: DMatrix<f64>,
    feedforward: Option<Feedforward>,
}

impl fmt::Debug for LinearFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearFeedback")
            .field("layout", &self.layout)
            .field("kx", &self.kx)
            .field("kz", &self.kz)
            .field("feedforward", &self.feedforward.is_some())
            .finish()
    }
}

impl LinearFeedback {
    pub fn new(layout: FleetLayout, kx: DMatrix<f64>, kz: DMatrix<f64>) -> Result<Self> {
        let m = layout.fleet_input_dim();
        let shape = |k: &DMatrix<f64>, cols: usize, what: &str| {
            if k.nrows() != m || k.ncols() != cols {
                return Err(Error::InvalidModel(format!(
                    "{what} is {}x{}, expected {m}x{cols}",
                    k.nrows(),
                    k.ncols()
                )));
            }
            Ok(())
        };
        shape(&kx, layout.fleet_state_dim(), "K_x")?;
        shape(&kz, layout.fleet_obs_dim(), "K_z")?;
        Ok(Self {
            layout,
            kx,
            kz,
            feedforward: None,
        })
    }

    pub fn with_feedforward(mut self, v: Feedforward) -> Self {
        self.feedforward = Some(v);
        self
    }

    pub fn kx(&self) -> &DMatrix<f64> {
        &self.kx
    }

    pub fn kz(&self) -> &DMatrix<f64> {
        &self.kz
    }
}

impl CentralController for LinearFeedback {
    fn layout(&self) -> FleetLayout {
        self.layout
    }

    fn act(&self, x: &[f64], z: &[f64], t: Tick) -> Vec<f64> {
        let mut u =
            -(&self.kx * DVector::from_column_slice(x)) + &self.kz * DVector::from_column_slice(z);
        if let Some(v) = &self.feedforward {
            for (a, b) in u.iter_mut().zip(v(t)) {
                *a += b;
            }
        }
        u.as_slice().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_law() {
        let l = FleetLayout::new(1, 2, 1, 1);
        let c = LinearFeedback::new(
            l,
            DMatrix::from_row_slice(1, 2, &[2.0, 1.0]),
            DMatrix::from_element(1, 1, 3.0),
        )
        .unwrap()
        .with_feedforward(Arc::new(|t: Tick| vec![t.0 as f64]));
        // -(2*1 + 1*4) + 3*0.5 + 7
        assert_eq!(c.act(&[1.0, 4.0], &[0.5], Tick(7)), vec![2.5]);
        assert!(LinearFeedback::new(l, DMatrix::zeros(1, 3), DMatrix::zeros(1, 1)).is_err());
    }
}
