#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use scpanel::panel::Panel;
use scpanel::rng::XorShift64;

pub fn weekly_starts(t: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    (0..t).map(|k| start + Days::new(7 * k as u64)).collect()
}

/// Panel from unit columns; unit 0 is treated, ids are `u00`, `u01`, ...
pub fn panel_from_cols(cols: &[Vec<f64>], t0: usize) -> Panel {
    let t = cols[0].len();
    let n = cols.len();
    Panel::from_rates(
        (0..n).map(|j| format!("u{j:02}")).collect(),
        weekly_starts(t),
        7,
        t0,
        DMatrix::from_fn(t, n, |i, j| cols[j][i]),
        vec![1.0; n],
    )
    .unwrap()
}

/// Random panel with `n_donors` donors: two shared random-walk factors plus
/// unit noise, so donors are correlated but not collinear.
pub fn random_panel(seed: u64, n_donors: usize, t: usize, t0: usize) -> Panel {
    let mut rng = XorShift64::new(seed);
    let mut f1 = vec![0.0; t];
    let mut f2 = vec![0.0; t];
    let (mut a, mut b) = (0.0, 0.0);
    for s in 0..t {
        a += rng.normal();
        b += rng.normal();
        f1[s] = a;
        f2[s] = b;
    }
    let cols: Vec<Vec<f64>> = (0..=n_donors)
        .map(|_| {
            let (l1, l2) = (rng.normal(), rng.normal());
            let level = 5.0 * rng.uniform();
            (0..t)
                .map(|s| level + l1 * f1[s] + l2 * f2[s] + 0.5 * rng.normal())
                .collect()
        })
        .collect();
    panel_from_cols(&cols, t0)
}

/// Pre-period objective `(1/T0) sum (y - c - Xw)^2 + lambda |w|^2` on the demeaned panel.
pub fn objective(panel: &Panel, w: &[f64], c: f64, lambda: f64) -> f64 {
    let y = panel.y();
    let t0 = panel.t0();
    let mut sse = 0.0;
    for t in 0..t0 {
        let mut fit = c;
        for (k, wk) in w.iter().enumerate() {
            fit += wk * y[(t, k + 1)];
        }
        sse += (y[(t, 0)] - fit).powi(2);
    }
    sse / t0 as f64 + lambda * w.iter().map(|v| v * v).sum::<f64>()
}
