use nalgebra::DMatrix;
use serde::Serialize;

/// Column centers and scales applied before fitting.
#[derive(Debug, Clone, Serialize)]
pub struct StandardizationRecord {
    pub applied: bool,
    pub x_means: Vec<f64>,
    pub x_scales: Vec<f64>,
    pub y_means: Vec<f64>,
    /// Columns of X with (numerically) zero variance; their scale is 1.
    pub degenerate_columns: Vec<usize>,
}

impl StandardizationRecord {
    pub fn identity(p: usize, m: usize) -> Self {
        Self {
            applied: false,
            x_means: vec![0.0; p],
            x_scales: vec![1.0; p],
            y_means: vec![0.0; m],
            degenerate_columns: Vec::new(),
        }
    }

    /// Maps a p×m coefficient fitted on standardized X back to the original
    /// X scale (row j divided by the scale of column j).
    pub fn unscale_coef(&self, coef: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = coef.clone();
        for (j, s) in self.x_scales.iter().enumerate() {
            out.row_mut(j).unscale_mut(*s);
        }
        out
    }

    /// Intercept that pairs with [`Self::unscale_coef`]: `mean(Y) - mean(X) B`.
    pub fn intercept(&self, coef_original: &DMatrix<f64>) -> Vec<f64> {
        (0..coef_original.ncols())
            .map(|c| {
                self.y_means[c]
                    - self
                        .x_means
                        .iter()
                        .enumerate()
                        .map(|(j, mu)| mu * coef_original[(j, c)])
                        .sum::<f64>()
            })
            .collect()
    }
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

/// Centers and scales X to unit variance (divisor n) and centers Y.
pub fn standardize(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, StandardizationRecord) {
    let n = x.nrows() as f64;
    let x_means = column_means(x);
    let y_means = column_means(y);

    let mut xs = x.clone();
    let mut x_scales = Vec::with_capacity(x.ncols());
    let mut degenerate_columns = Vec::new();
    for (j, mut col) in xs.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_means[j]);
        let sd = (col.norm_squared() / n).sqrt();
        if sd <= 1e-12 * x_means[j].abs().max(1.0) {
            degenerate_columns.push(j);
            col.fill(0.0);
            x_scales.push(1.0);
        } else {
            col.unscale_mut(sd);
            x_scales.push(sd);
        }
    }

    let mut yc = y.clone();
    for (c, mut col) in yc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-y_means[c]);
    }

    (
        xs,
        yc,
        StandardizationRecord {
            applied: true,
            x_means,
            x_scales,
            y_means,
            degenerate_columns,
        },
    )
}
