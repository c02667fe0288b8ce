//! Quaternion and octonion multiplication, used to build the bracket maps of
//! the quaternionic and octonionic Heisenberg groups.
//!
//! Octonions are obtained from quaternion pairs by Cayley–Dickson doubling:
//! `(a, b)(c, d) = (ac - conj(d) b, d a + b conj(c))`.

pub type Quaternion = [f64; 4];
pub type Octonion = [f64; 8];

pub fn quat_mul(a: &Quaternion, b: &Quaternion) -> Quaternion {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_conj(a: &Quaternion) -> Quaternion {
    [a[0], -a[1], -a[2], -a[3]]
}

fn quat_sub(a: &Quaternion, b: &Quaternion) -> Quaternion {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

fn quat_add(a: &Quaternion, b: &Quaternion) -> Quaternion {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn oct_mul(x: &Octonion, y: &Octonion) -> Octonion {
    let a: Quaternion = [x[0], x[1], x[2], x[3]];
    let b: Quaternion = [x[4], x[5], x[6], x[7]];
    let c: Quaternion = [y[0], y[1], y[2], y[3]];
    let d: Quaternion = [y[4], y[5], y[6], y[7]];
    let lo = quat_sub(&quat_mul(&a, &c), &quat_mul(&quat_conj(&d), &b));
    let hi = quat_add(&quat_mul(&d, &a), &quat_mul(&b, &quat_conj(&c)));
    [lo[0], lo[1], lo[2], lo[3], hi[0], hi[1], hi[2], hi[3]]
}

/// Matrix (row-major, `dim x dim`) of `x -> x * e_unit` for a basis unit of a
/// real algebra given by its multiplication.
fn right_mult_matrix<const D: usize>(
    unit: usize,
    mul: impl Fn(&[f64; D], &[f64; D]) -> [f64; D],
) -> Vec<f64> {
    let mut e_u = [0.0; D];
    e_u[unit] = 1.0;
    let mut m = vec![0.0; D * D];
    for j in 0..D {
        let mut e_j = [0.0; D];
        e_j[j] = 1.0;
        let col = mul(&e_j, &e_u);
        for i in 0..D {
            m[i * D + j] = col[i];
        }
    }
    m
}

/// Right multiplication by the imaginary quaternion units i, j, k.
pub fn quaternion_right_units() -> Vec<Vec<f64>> {
    (1..4)
        .map(|u| right_mult_matrix::<4>(u, quat_mul))
        .collect()
}

/// Right multiplication by the seven imaginary octonion units.
pub fn octonion_right_units() -> Vec<Vec<f64>> {
    (1..8).map(|u| right_mult_matrix::<8>(u, oct_mul)).collect()
}
