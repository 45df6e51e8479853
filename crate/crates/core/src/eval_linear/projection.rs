use crate::error::{Error, Result};
use crate::plot::{Canvas, PALETTE};
use ndarray::{Array1, Array2, Axis};
use serde::Serialize;
use std::path::Path;

/// Linear principal-component projection (a deterministic stand-in for
/// non-linear embeddings such as UMAP).
#[derive(Debug, Clone)]
pub struct Projection {
    pub coords: Array2<f64>,
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    pub explained_variance: [f64; 2],
}

fn orthonormalize(v: &mut Array2<f64>) {
    for j in 0..v.ncols() {
        for k in 0..j {
            let p = v.column(j).dot(&v.column(k));
            let ck = v.column(k).to_owned();
            v.column_mut(j).scaled_add(-p, &ck);
        }
        let n = v.column(j).dot(&v.column(j)).sqrt();
        if n > 0.0 {
            v.column_mut(j).mapv_inplace(|x| x / n);
        }
    }
}

/// Top-2 principal components via subspace iteration followed by a 2×2
/// Rayleigh–Ritz rotation. Each component's largest-magnitude loading is
/// made positive.
pub fn project_2d(x: &Array2<f64>) -> Result<Projection> {
    let (n, d) = x.dim();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let mean = x.mean_axis(Axis(0)).unwrap();
    let xc = x - &mean;
    let cov = xc.t().dot(&xc) / n as f64;
    let k = d.min(2);
    let mut v = Array2::from_shape_fn((d, k), |(i, j)| 1.0 + ((i * 7 + j * 13) % 11) as f64 / 11.0 + j as f64 * (i as f64).cos());
    orthonormalize(&mut v);
    for _ in 0..2000 {
        let mut next = cov.dot(&v);
        orthonormalize(&mut next);
        let delta = (&next - &v).mapv(f64::abs).sum();
        v = next;
        if delta < 1e-13 {
            break;
        }
    }
    let small = v.t().dot(&cov).dot(&v);
    let mut comps = v.clone();
    if k == 2 {
        let (a, b, c) = (small[[0, 0]], small[[0, 1]], small[[1, 1]]);
        let theta = 0.5 * (2.0 * b).atan2(a - c);
        let (co, si) = (theta.cos(), theta.sin());
        for i in 0..d {
            let (p, q) = (v[[i, 0]], v[[i, 1]]);
            comps[[i, 0]] = co * p + si * q;
            comps[[i, 1]] = -si * p + co * q;
        }
    }
    let mut components = Array2::zeros((2, d));
    let mut explained = [0.0; 2];
    for j in 0..k {
        let mut col = comps.column(j).to_owned();
        let pivot = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        explained[j] = col.dot(&cov.dot(&col));
        components.row_mut(j).assign(&col);
    }
    if explained[1] > explained[0] {
        explained.swap(0, 1);
        let r0 = components.row(0).to_owned();
        let r1 = components.row(1).to_owned();
        components.row_mut(0).assign(&r1);
        components.row_mut(1).assign(&r0);
    }
    let coords = xc.dot(&components.t());
    Ok(Projection { coords, components, mean, explained_variance: explained })
}

#[derive(Serialize)]
struct ProjectionRow<'a> {
    index: usize,
    label: &'a str,
    pc1: f64,
    pc2: f64,
}

/// Writes `projection.csv` and a class-coloured `projection.png`.
pub fn write_projection(p: &Projection, labels: &[usize], class_names: &[String], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("projection.csv"))?;
    for (i, row) in p.coords.rows().into_iter().enumerate() {
        let label = labels.get(i).and_then(|&l| class_names.get(l)).map_or("", String::as_str);
        w.serialize(ProjectionRow { index: i, label, pc1: row[0], pc2: row[1] })?;
    }
    w.flush()?;
    let pts: Vec<(f64, f64, usize)> =
        p.coords.rows().into_iter().zip(labels).map(|(r, &l)| (r[0], r[1], l)).collect();
    let mut canvas = Canvas::new(480, 480);
    canvas.scatter(&pts, &PALETTE);
    canvas.save(&dir.join("projection.png"))?;
    let meta = serde_json::json!({
        "method": "pca",
        "note": "linear principal-component projection",
        "explained_variance": p.explained_variance,
    });
    std::fs::write(dir.join("projection.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planar_data_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = Array2::from_shape_fn((2, 10), |_| rng.random_range(-1.0..1.0));
        let coef = Array2::from_shape_fn((50, 2), |_| rng.random_range(-3.0..3.0));
        let x = coef.dot(&basis) + 5.0;
        let p = project_2d(&x).unwrap();
        let recon = p.coords.dot(&p.components) + &p.mean;
        let err = (&recon - &x).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(err < 1e-8, "{err}");
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
    }

    #[test]
    fn separated_classes_stay_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((40, 6), |(i, _)| rng.random_range(-0.5..0.5) + if i < 20 { -4.0 } else { 4.0 });
        let p = project_2d(&x).unwrap();
        let c0 = p.coords.slice(ndarray::s![..20, 0]).mean().unwrap();
        let c1 = p.coords.slice(ndarray::s![20.., 0]).mean().unwrap();
        let within = p.coords.slice(ndarray::s![..20, 0]).std(0.0);
        assert!((c0 - c1).abs() > within);
    }

    #[test]
    fn sign_convention_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((30, 5), |_| rng.random_range(-1.0..1.0));
        let a = project_2d(&x).unwrap();
        let b = project_2d(&x.mapv(|v| v)).unwrap();
        assert_eq!(a.coords, b.coords);
        for row in a.components.rows() {
            let pivot = row.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(pivot > 0.0);
        }
        assert!(project_2d(&x.slice(ndarray::s![..2, ..]).to_owned()).is_err());
    }
}
