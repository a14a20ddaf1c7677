use nalgebra::DMatrix;

use super::{fit_ols, take_rows, FoldPlan, OutcomeModel};
use crate::error::{Error, Result};

/// Forward selection of columns of `x` for a linear model of `y`.
///
/// Each step adds the column with the smallest K-fold cross-validated sum of
/// squared prediction errors; selection stops as soon as no addition lowers
/// that error. Columns are returned in the order they were added.
pub fn stepwise_select(x: &DMatrix<f64>, y: &[f64], folds: &FoldPlan) -> Result<Vec<usize>> {
    if x.nrows() != y.len() || folds.fold_of_unit().len() != y.len() {
        return Err(Error::arg("x, y and the fold plan disagree on the number of units"));
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds.k()).map(|f| (folds.complement(f), folds.members(f))).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = cv_error(x, y, &chosen, &splits)?;
    loop {
        let mut best: Option<(f64, usize)> = None;
        for c in (0..x.ncols()).filter(|c| !chosen.contains(c)) {
            let mut cols = chosen.clone();
            cols.push(c);
            let err = cv_error(x, y, &cols, &splits)?;
            if best.is_none_or(|(e, _)| err < e) {
                best = Some((err, c));
            }
        }
        match best {
            Some((err, c)) if err < current => {
                chosen.push(c);
                current = err;
            }
            _ => return Ok(chosen),
        }
    }
}

fn cv_error(x: &DMatrix<f64>, y: &[f64], cols: &[usize], splits: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    let xs = x.select_columns(cols.iter());
    let mut sse = 0.0;
    for (train, test) in splits {
        if train.is_empty() {
            // one fold: fall back to in-sample error
            let fit = fit_ols(&xs, y)?;
            sse += fit.predict(&xs).iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
            continue;
        }
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fit = fit_ols(&take_rows(&xs, train), &ty)?;
        let pred = fit.predict(&take_rows(&xs, test));
        sse += pred.iter().zip(test).map(|(p, &i)| (p - y[i]).powi(2)).sum::<f64>();
    }
    Ok(sse)
}
