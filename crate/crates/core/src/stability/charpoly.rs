//! Characteristic polynomials and their roots, independent of any
//! eigensolver. Used to cross-check spectra of small matrices.

use nalgebra::{Complex, DMatrix};

/// Coefficients `[c_0, c_1, ..., c_{n-1}, 1]` of `det(lambda I - A)` in
/// ascending degree, by the Faddeev-LeVerrier recursion.
pub fn characteristic_polynomial(a: &DMatrix<f64>) -> Vec<f64> {
    assert!(a.is_square(), "characteristic polynomial needs a square matrix");
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m;
        for i in 0..n {
            m[(i, i)] += coeffs[n - k + 1];
        }
        let am = a * &m;
        coeffs[n - k] = -am.trace() / k as f64;
    }
    coeffs
}

/// Horner evaluation of an ascending-degree real polynomial at a complex point.
pub fn evaluate(coeffs: &[f64], at: Complex<f64>) -> Complex<f64> {
    coeffs
        .iter()
        .rev()
        .fold(Complex::new(0.0, 0.0), |acc, &c| acc * at + c)
}

fn evaluate_with_derivative(coeffs: &[f64], at: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
    let mut p = Complex::new(0.0, 0.0);
    let mut dp = Complex::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * at + p;
        p = p * at + c;
    }
    (p, dp)
}

/// All complex roots of a polynomial with ascending real coefficients, by
/// Aberth-Ehrlich simultaneous iteration followed by Newton polishing.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let mut coeffs = coeffs.to_vec();
    while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
        coeffs.pop();
    }
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = coeffs[degree];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    // Cauchy bound on root magnitudes.
    let radius = 1.0 + monic[..degree].iter().fold(0.0_f64, |m, c| m.max(c.abs()));

    let mut roots: Vec<Complex<f64>> = (0..degree)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / degree as f64 + 0.4;
            Complex::from_polar(0.5 * radius, angle)
        })
        .collect();

    for _ in 0..500 {
        let mut worst: f64 = 0.0;
        for i in 0..degree {
            let (p, dp) = evaluate_with_derivative(&monic, roots[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex<f64> = (0..degree)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = roots[i] - roots[j];
                    if diff.norm() == 0.0 {
                        Complex::new(0.0, 0.0)
                    } else {
                        diff.inv()
                    }
                })
                .sum();
            let step = ratio / (Complex::new(1.0, 0.0) - ratio * repulsion);
            roots[i] -= step;
            worst = worst.max(step.norm() / roots[i].norm().max(1.0));
        }
        if worst < 1e-16 {
            break;
        }
    }

    for root in &mut roots {
        for _ in 0..5 {
            let (p, dp) = evaluate_with_derivative(&monic, *root);
            if dp.norm() == 0.0 {
                break;
            }
            let next = *root - p / dp;
            if evaluate(&monic, next).norm() < p.norm() {
                *root = next;
            } else {
                break;
            }
        }
        if root.im.abs() < 1e-14 * root.norm().max(1.0) {
            root.im = 0.0;
        }
    }
    sort_spectrum(&mut roots);
    roots
}

/// Orders by real part, then imaginary part.
pub fn sort_spectrum(values: &mut [Complex<f64>]) {
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Smallest achievable `max_k |a_k - b_pi(k)|` over pairings `pi`; exhaustive
/// for up to 8 values, greedy nearest-neighbour beyond.
pub fn spectrum_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let n = a.len();
    if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let worst = (0..n).map(|k| (a[k] - b[p[k]]).norm()).fold(0.0, f64::max);
            best = best.min(worst);
        });
        best
    } else {
        let mut used = vec![false; n];
        let mut worst: f64 = 0.0;
        for x in a {
            let (j, dist) = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, y)| (j, (x - y).norm()))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .expect("equal lengths");
            used[j] = true;
            worst = worst.max(dist);
        }
        worst
    }
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}
