//! Reference implementations used to check the library. Each one is written
//! from the definition, independently of the code under test, and favors
//! obviousness over speed.
#![allow(dead_code)]

use std::collections::BTreeMap;

use num_rational::Ratio;

/// Counter name -> value for one window, built by chunking the symbol stream
/// and scanning each chunk. Symbols are `a b l n s` plus `o` for uncounted.
pub fn brute_windows(symbols: &[char], window: usize) -> Vec<BTreeMap<String, u32>> {
    let classes = ['a', 'b', 'l', 'n', 's'];
    let mut out = Vec::new();
    let mut start = 0;
    while start < symbols.len() {
        let end = (start + window).min(symbols.len());
        let chunk = &symbols[start..end];
        let mut counts = BTreeMap::new();
        for x in classes {
            counts.insert(x.to_string(), 0u32);
            for y in classes {
                counts.insert(format!("{x}{y}"), 0u32);
            }
        }
        for (k, &c) in chunk.iter().enumerate() {
            if c != 'o' {
                *counts.get_mut(&c.to_string()).unwrap() += 1;
            }
            if k + 1 < chunk.len() && c != 'o' && chunk[k + 1] != 'o' {
                *counts.get_mut(&format!("{c}{}", chunk[k + 1])).unwrap() += 1;
            }
        }
        out.push(counts);
        start = end;
    }
    out
}

pub type Q = Ratio<i128>;

/// Accuracy, precision, recall as exact rationals; `None` on a zero denominator.
pub fn rational_metrics(tp: u64, tn: u64, fp: u64, fn_: u64) -> (Option<Q>, Option<Q>, Option<Q>) {
    let q = |n: u64, d: u64| (d > 0).then(|| Q::new(n as i128, d as i128));
    (q(tp + tn, tp + tn + fp + fn_), q(tp, tp + fp), q(tp, tp + fn_))
}

/// Plain recursive CART: weighted Gini in exact rationals, candidate
/// thresholds at integer midpoints, first minimum wins (feature, then
/// threshold), split only on strict improvement, ties at leaves -> benign.
pub enum RefTree {
    Leaf(bool),
    Split(usize, u32, Box<RefTree>, Box<RefTree>),
}

fn gini(labels: &[bool]) -> Q {
    let n = labels.len() as i128;
    let m = labels.iter().filter(|&&l| l).count() as i128;
    let p = Q::new(m, n);
    Q::from_integer(1) - p * p - (Q::from_integer(1) - p) * (Q::from_integer(1) - p)
}

pub fn ref_tree(rows: &[Vec<u32>], labels: &[bool]) -> RefTree {
    let malicious = labels.iter().filter(|&&l| l).count();
    let leaf = RefTree::Leaf(2 * malicious > labels.len());
    if malicious == 0 || malicious == labels.len() || labels.len() < 2 {
        return leaf;
    }
    let n = Q::from_integer(labels.len() as i128);
    let mut best: Option<(Q, usize, u32)> = None;
    for f in 0..rows[0].len() {
        let mut values: Vec<u32> = rows.iter().map(|r| r[f]).collect();
        values.sort();
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2;
            let left: Vec<bool> = rows.iter().zip(labels).filter(|(r, _)| r[f] <= t).map(|(_, &l)| l).collect();
            let right: Vec<bool> = rows.iter().zip(labels).filter(|(r, _)| r[f] > t).map(|(_, &l)| l).collect();
            let imp = Q::from_integer(left.len() as i128) / n * gini(&left)
                + Q::from_integer(right.len() as i128) / n * gini(&right);
            if best.as_ref().map_or(true, |b| imp < b.0) {
                best = Some((imp, f, t));
            }
        }
    }
    match best {
        Some((imp, f, t)) if imp < gini(labels) => {
            let (mut lr, mut ll, mut rr, mut rl) = (vec![], vec![], vec![], vec![]);
            for (r, &l) in rows.iter().zip(labels) {
                if r[f] <= t {
                    lr.push(r.clone());
                    ll.push(l);
                } else {
                    rr.push(r.clone());
                    rl.push(l);
                }
            }
            RefTree::Split(f, t, Box::new(ref_tree(&lr, &ll)), Box::new(ref_tree(&rr, &rl)))
        }
        _ => leaf,
    }
}

impl RefTree {
    pub fn predict(&self, x: &[u32]) -> bool {
        match self {
            RefTree::Leaf(c) => *c,
            RefTree::Split(f, t, l, r) => {
                if x[*f] <= *t {
                    l.predict(x)
                } else {
                    r.predict(x)
                }
            }
        }
    }
}

/// Central differences of `f` at `p`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|k| {
            q[k] = p[k] + h;
            let up = f(&q);
            q[k] = p[k] - h;
            let down = f(&q);
            q[k] = p[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Cyclic Jacobi rotations; eigenvalues sorted descending.
pub fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Largest `V * I(V)` over `points + 1` evenly spaced voltages in `[0, v_oc]`.
pub fn grid_sweep_mpp(iv: impl Fn(f64) -> f64, v_oc: f64, points: usize) -> f64 {
    (0..=points).map(|k| v_oc * k as f64 / points as f64).map(|v| v * iv(v)).fold(f64::MIN, f64::max)
}

/// Output of a first-order lag driven by a step to `target` from `start`.
pub fn first_order_step(start: f64, target: f64, tau: f64, t: f64) -> f64 {
    target + (start - target) * (-t / tau).exp()
}

/// Forward Euler on `df/dt = a - d (f - f0)` with a tiny step.
pub fn euler_frequency(f: f64, f0: f64, a: f64, d: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps as f64;
    let mut x = f;
    for _ in 0..steps {
        x += h * (a - d * (x - f0));
    }
    x
}

/// Exact value of a finite, positive, normal f64 together with half its ulp.
pub fn f64_exact(x: f64) -> (Q, Q) {
    assert!(x.is_finite() && x > 0.0);
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1075;
    let mant = ((bits & ((1u64 << 52) - 1)) | (1u64 << 52)) as i128;
    let pow = |e: i32| if e >= 0 { Q::from_integer(1i128 << e) } else { Q::new(1, 1i128 << -e) };
    (Q::from_integer(mant) * pow(exp), pow(exp - 1))
}

/// `x` is the f64 nearest to `q`.
pub fn correctly_rounded(x: f64, q: &Q) -> bool {
    if *q.numer() == 0 {
        return x == 0.0;
    }
    let (exact, half_ulp) = f64_exact(x);
    let diff = if exact > *q { exact - *q } else { *q - exact };
    diff <= half_ulp
}
