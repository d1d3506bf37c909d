//! Validates the closed-form kinetics against independent numerical
//! references: a matrix exponential of the full rate generator for the
//! correlation function, and Runge-Kutta integration of the population
//! equations for the steady state.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spekit_core::kinetics::InstantRates;

type M3 = [[f64; 3]; 3];

/// Population-rate generator: columns hold outflow, `d p / dt = A p` with
/// `p = (p1, p2, p3)`.
fn generator(r: &InstantRates<f64>) -> M3 {
    [[-r.k12, r.k21, r.k31], [r.k12, -(r.k21 + r.k23), 0.0], [0.0, r.k23, -r.k31]]
}

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                c[i][j] += a[i][k] * bk[j];
            }
        }
    }
    c
}

fn mat_vec(a: &M3, v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] += a[i][j] * v[j];
        }
    }
    out
}

/// `exp(a)` by scaling-and-squaring with a Taylor series on the scaled
/// matrix; entirely independent of the eigendecomposition under test.
fn mat_exp(a: &M3) -> M3 {
    let norm = a.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(s);
    let mut b = *a;
    for row in b.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    let mut result = [[0.0; 3]; 3];
    let mut term = [[0.0; 3]; 3];
    for i in 0..3 {
        result[i][i] = 1.0;
        term[i][i] = 1.0;
    }
    for k in 1..=24 {
        term = mat_mul(&term, &b);
        let inv_k = 1.0 / k as f64;
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v *= inv_k;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = mat_mul(&result, &result);
    }
    result
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    10f64.powf(lo.log10() + u * (hi / lo).log10())
}

/// Draws rate sets until the closed form accepts them (no degenerate or
/// inverted spectra), so the comparison covers exactly the supported domain.
fn random_rates(rng: &mut ChaCha8Rng) -> InstantRates<f64> {
    loop {
        let rates = InstantRates {
            k12: log_uniform(rng, 1e-3, 10.0),
            k21: log_uniform(rng, 1e-3, 10.0),
            k23: log_uniform(rng, 1e-4, 1.0),
            k31: log_uniform(rng, 1e-4, 1.0),
        };
        if rates.analytic_g2().is_ok() {
            return rates;
        }
    }
}

#[test]
fn closed_form_g2_matches_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x8d2f_1c44);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rates = random_rates(&mut rng);
        let params = rates.analytic_g2().unwrap();
        let p2_ss = rates.steady_state().unwrap().p2;
        let a = generator(&rates);
        // Lags spanning well below the antibunching time to well past the
        // bunching time, geometrically spaced.
        let lo = params.tau1 * 1e-2;
        let hi = params.tau2 * 5.0;
        let ratio = (hi / lo).ln();
        for j in 0..200 {
            let tau = lo * (ratio * j as f64 / 199.0).exp();
            let mut at = a;
            for row in at.iter_mut() {
                for v in row.iter_mut() {
                    *v *= tau;
                }
            }
            // Ground state right after a detection.
            let p = mat_vec(&mat_exp(&at), [1.0, 0.0, 0.0]);
            let reference = p[1] / p2_ss;
            let diff = (params.eval(tau) - reference).abs() / reference.max(1.0);
            worst = worst.max(diff);
        }
    }
    assert!(worst < 1e-8, "worst relative deviation {worst}");
}

#[test]
fn eigenvalue_identities_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51e0_77ab);
    for _ in 0..1000 {
        let rates = random_rates(&mut rng);
        let params = rates.analytic_g2().unwrap();
        let l1 = 1.0 / params.tau1;
        let l2 = 1.0 / params.tau2;
        let sum = rates.k12 + rates.k21 + rates.k23 + rates.k31;
        let prod = rates.k31 * (rates.k12 + rates.k21 + rates.k23) + rates.k12 * rates.k23;
        assert!(
            ((l1 + l2) - sum).abs() <= 1e-10 * sum,
            "trace identity violated: {} vs {}",
            l1 + l2,
            sum
        );
        assert!(
            (l1 * l2 - prod).abs() <= 1e-10 * prod,
            "determinant identity violated: {} vs {}",
            l1 * l2,
            prod
        );
        // Equivalent amplitude expressions from the two eigenvector forms.
        let k = rates.k12 + rates.k21 + rates.k23;
        let a_alt = l1 * (k - l1) / (rates.k31 * (l1 - l2));
        assert!((params.a - a_alt).abs() <= 1e-9 * params.a.max(1.0));
    }
}

/// 3x3 linear solve with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve3(mut m: M3, mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..3).rev() {
        for k in col + 1..3 {
            b[col] -= m[col][k] * b[k];
        }
        b[col] /= m[col][col];
    }
    b
}

#[test]
fn steady_state_is_the_relaxation_fixed_point() {
    // Backward-Euler relaxation of the population equations. The explicit
    // integrators are useless here (rate ratios to 1e7 make the system
    // stiff), while the implicit map has the stationary vector as its
    // exact fixed point and damps every mode unconditionally. Eigenvalue
    // separation is capped so linear-solve conditioning stays well below
    // the tolerance; extreme separations are already covered by the
    // matrix-exponential comparison.
    let mut rng = ChaCha8Rng::seed_from_u64(0x33c9_02d7);
    let mut accepted = 0;
    while accepted < 200 {
        let rates = random_rates(&mut rng);
        let params = rates.analytic_g2().unwrap();
        let (l1, l2) = (1.0 / params.tau1, 1.0 / params.tau2);
        if l1 / l2 > 1e4 {
            continue;
        }
        accepted += 1;
        let expect = rates.steady_state().unwrap();
        let a = generator(&rates);
        for corner in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let mut p = corner;
            let mut h = 0.5 / l1;
            for _ in 0..160 {
                let mut m = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        m[i][j] = f64::from(u8::from(i == j)) - h * a[i][j];
                    }
                }
                p = solve3(m, p);
                h = (h * 1.4).min(5.0 / l2);
            }
            assert!((p[0] - expect.p1).abs() < 1e-9, "p1 {} vs {}", p[0], expect.p1);
            assert!((p[1] - expect.p2).abs() < 1e-9, "p2 {} vs {}", p[1], expect.p2);
            assert!((p[2] - expect.p3).abs() < 1e-9, "p3 {} vs {}", p[2], expect.p3);
            assert!((p[0] + p[1] + p[2] - 1.0).abs() < 1e-9);
        }
    }
}
