use crate::scalar::Scalar;

/// Smooth maximum `gamma * ln(sum_i exp(x_i / gamma))`, evaluated with a max shift.
///
/// Lies in `[max(xs), max(xs) + gamma * ln(len)]`. Returns negative infinity
/// for an empty slice, the identity element of the operation.
pub fn softor<T: Scalar>(xs: &[T], gamma: T) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if xs.len() <= 1 || m == T::neg_infinity() {
        return m;
    }
    let sum: T = xs.iter().map(|&x| ((x - m) / gamma).exp()).sum();
    m + gamma * sum.ln()
}

/// Two-argument form used by the message-passing updates.
pub fn softor2<T: Scalar>(a: T, b: T, gamma: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + gamma * ((lo - hi) / gamma).exp().ln_1p()
}

/// Partial derivatives of [`softor`]: the softmax `exp(x_i/gamma) / sum_j exp(x_j/gamma)`.
pub fn softor_grad<T: Scalar>(xs: &[T], gamma: T, out: &mut Vec<T>) {
    out.clear();
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    out.extend(xs.iter().map(|&x| ((x - m) / gamma).exp()));
    let sum: T = out.iter().copied().sum();
    for g in out.iter_mut() {
        *g /= sum;
    }
}

/// Partial derivatives of [`softor2`] with respect to `a` and `b`.
pub fn softor2_grad<T: Scalar>(a: T, b: T, gamma: T) -> (T, T) {
    // d/da = 1 / (1 + exp((b - a)/gamma)), written stably for either sign
    let z = (b - a) / gamma;
    let da = if z > T::zero() {
        let e = (-z).exp();
        e / (T::one() + e)
    } else {
        T::one() / (T::one() + z.exp())
    };
    (da, T::one() - da)
}
