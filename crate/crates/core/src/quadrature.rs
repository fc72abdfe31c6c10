//! Adaptive Gauss–Kronrod quadrature on finite and half-infinite intervals.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integral of `f` over `[a, b]` to relative tolerance `rel_tol`
/// (absolute floor `1e-300`), by recursive bisection of G7–K15 panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let (whole, err) = kronrod15(&f, a, b);
    if err <= rel_tol * whole.abs().max(1e-300) {
        return whole;
    }
    let mut panels = vec![(a, b, whole, err)];
    let mut total = whole;
    let mut total_err = err;
    for _ in 0..20_000 {
        if total_err <= rel_tol * total.abs().max(1e-300) {
            break;
        }
        // split the panel with the largest error estimate
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (pa, pb, pv, pe) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        let (lv, le) = kronrod15(&f, pa, mid);
        let (rv, re) = kronrod15(&f, mid, pb);
        total += lv + rv - pv;
        total_err += le + re - pe;
        panels.push((pa, mid, lv, le));
        panels.push((mid, pb, rv, re));
    }
    panels.iter().map(|p| p.2).sum()
}

/// Integral of `f` over `[a, ∞)` using the map `x = a + u/(1-u)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, rel_tol: f64) -> f64 {
    integrate(
        |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let one_minus = 1.0 - u;
            let x = a + u / one_minus;
            let v = f(x) / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        rel_tol,
    )
}

/// Integral over the whole real line.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, rel_tol: f64) -> f64 {
    integrate_to_infinity(&f, 0.0, rel_tol) + integrate_to_infinity(|x| f(-x), 0.0, rel_tol)
}

/// Expectation of `f(Y)` for `Y ~ N(mean, var)`.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(f: F, mean: f64, var: f64, rel_tol: f64) -> f64 {
    let sd = var.sqrt();
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    integrate(
        |y| f(y) * norm * (-(y - mean).powi(2) / (2.0 * var)).exp(),
        mean - 12.0 * sd,
        mean + 12.0 * sd,
        rel_tol,
    )
}
