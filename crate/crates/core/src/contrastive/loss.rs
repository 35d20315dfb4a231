use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Normalized temperature-scaled cross-entropy over `2N` embeddings whose
/// positive pairs sit at rows `(2i, 2i + 1)`. Returns the mean loss over all
/// anchors and its gradient w.r.t. the raw (unnormalized) rows.
pub fn nt_xent_loss<F: Scalar>(embeddings: &Array2<F>, temperature: F) -> Result<(F, Array2<F>)> {
    let rows = embeddings.nrows();
    if rows < 2 || !rows.is_multiple_of(2) {
        return Err(Error::arg(format!("expected an even number of rows >= 2, got {rows}")));
    }
    if !(temperature > F::zero()) {
        return Err(Error::arg("temperature must be positive"));
    }
    let norms: Array1<F> = embeddings.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| !(n > F::zero()) || !n.is_finite()) {
        return Err(Error::Numeric("embedding row has zero or non-finite norm".into()));
    }
    let z = embeddings / &norms.view().insert_axis(Axis(1));
    let sim = z.dot(&z.t()) / temperature;
    let partner = |a: usize| a ^ 1;

    // Row-wise softmax over b != a.
    let mut prob = Array2::zeros((rows, rows));
    let mut loss = F::zero();
    for a in 0..rows {
        let max = (0..rows).filter(|&b| b != a).map(|b| sim[[a, b]]).fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for b in (0..rows).filter(|&b| b != a) {
            let e = (sim[[a, b]] - max).exp();
            prob[[a, b]] = e;
            total += e;
        }
        prob.row_mut(a).mapv_inplace(|v| v / total);
        loss += max + total.ln() - sim[[a, partner(a)]];
    }
    let count = F::from_count(rows);
    loss /= count;

    // d loss / d sim[a][b], symmetrized because sim is built from z·zᵀ.
    let mut g_sim = prob;
    for a in 0..rows {
        g_sim[[a, partner(a)]] -= F::one();
    }
    let g_sim = (&g_sim + &g_sim.t()) / (count * temperature);
    let g_z = g_sim.dot(&z);

    // Through the row normalization: (I − z zᵀ) g / |e|.
    let mut grad = g_z;
    for ((mut g, zr), &n) in grad.axis_iter_mut(Axis(0)).zip(z.axis_iter(Axis(0))).zip(norms.iter()) {
        let along = g.dot(&zr);
        g.zip_mut_with(&zr, |gv, &zv| *gv = (*gv - along * zv) / n);
    }
    Ok((loss, grad))
}
