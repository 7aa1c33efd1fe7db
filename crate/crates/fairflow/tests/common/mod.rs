//! Helpers shared by the integration suites.

#![allow(dead_code)]

/// Dense feasible sample of `{w >= 0, sum w = 1, f . w = c}`.
///
/// Walks the simplex lattice with `per_axis` subdivisions; every lattice
/// point close to the hyperplane is kept, and every lattice edge that
/// straddles it contributes its crossing point. Edges along the one-simplex
/// between two unit vectors pass through the polytope's true vertices, so
/// the sample contains them exactly.
pub fn dense_polytope_sample(f: &[f64], c: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let n = f.len();
    let mut lattice: Vec<Vec<usize>> = Vec::new();
    compositions(n, per_axis, &mut Vec::new(), &mut lattice);
    let m = per_axis as f64;
    let value = |w: &[f64]| w.iter().zip(f).map(|(wi, fi)| wi * fi).sum::<f64>();
    let mut points = Vec::new();
    for comp in &lattice {
        let u: Vec<f64> = comp.iter().map(|&k| k as f64 / m).collect();
        let vu = value(&u);
        if (vu - c).abs() < 1e-12 {
            points.push(u.clone());
        }
        for i in 0..n {
            if comp[i] == 0 {
                continue;
            }
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut vcomp = comp.clone();
                vcomp[i] -= 1;
                vcomp[j] += 1;
                let v: Vec<f64> = vcomp.iter().map(|&k| k as f64 / m).collect();
                let vv = value(&v);
                if (vu - c) * (vv - c) < 0.0 {
                    let theta = (c - vv) / (vu - vv);
                    points.push(
                        u.iter()
                            .zip(&v)
                            .map(|(a, b)| theta * a + (1.0 - theta) * b)
                            .collect(),
                    );
                }
            }
        }
    }
    points
}

/// All lattice points of the unit simplex with `per_axis` subdivisions.
pub fn dense_simplex_lattice(n: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let mut lattice: Vec<Vec<usize>> = Vec::new();
    compositions(n, per_axis, &mut Vec::new(), &mut lattice);
    let m = per_axis as f64;
    lattice
        .into_iter()
        .map(|comp| comp.into_iter().map(|k| k as f64 / m).collect())
        .collect()
}

fn compositions(n: usize, total: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if n == 1 {
        let mut v = prefix.clone();
        v.push(total);
        out.push(v);
        return;
    }
    for k in 0..=total {
        prefix.push(k);
        compositions(n - 1, total - k, prefix, out);
        prefix.pop();
    }
}

/// Lattice resolution giving roughly 1e4+ sample points for each dimension.
pub fn lattice_resolution(n: usize) -> usize {
    match n {
        0 | 1 => 1,
        2 => 2000,
        3 => 100,
        4 => 40,
        _ => 22,
    }
}
