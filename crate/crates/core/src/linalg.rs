//! Small linear algebra kit: dense LU, square band matrices, a sparse
//! row-interval LU with dense border columns, nonsymmetric eigenvalues by
//! Hessenberg QR, and Sturm bisection for symmetric tridiagonal matrices.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out.data[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// LU factorization with partial pivoting of a dense square matrix.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut piv = vec![0; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let m = a[i * n + k] / pivot;
                a[i * n + k] = m;
                if m != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= m * a[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, piv })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s / self.lu[i * n + i];
        }
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    /// Row-major, `kl + ku + 1` entries per row; entry `(i, j)` is stored at
    /// `i * width + (j + kl - i)`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    #[inline]
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let w = self.width();
        self.data[i * w + j + self.kl - i] += v;
    }

    /// Column range `[lo, hi)` of row `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.kl), (i + self.ku + 1).min(self.n))
    }

    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let (lo, hi) = self.row_range(i);
        let w = self.width();
        let start = i * w + lo + self.kl - i;
        (lo, &self.data[start..start + (hi - lo)])
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let (lo, vals) = self.row(i);
            *o = vals.iter().zip(&x[lo..]).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let (lo, vals) = self.row(i);
            for (k, v) in vals.iter().enumerate() {
                t.set(lo + k, i, *v);
            }
        }
        t
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n);
        for i in 0..self.n {
            let (lo, vals) = self.row(i);
            for (k, v) in vals.iter().enumerate() {
                d.set(i, lo + k, *v);
            }
        }
        d
    }

    /// Factor `self - shift I`.
    pub fn factor_shifted(&self, shift: f64) -> Result<BorderedLu> {
        let mut sys = BorderedSystem::new(self.n, 0);
        for i in 0..self.n {
            let (lo, vals) = self.row(i);
            let mut v = vals.to_vec();
            v[i - lo] -= shift;
            sys.push_row(lo, v, Vec::new());
        }
        sys.factor()
    }
}

#[derive(Debug, Clone)]
struct SparseRow {
    /// First stored column.
    lo: usize,
    /// Offset of column `lo` inside `vals`.
    off: usize,
    vals: Vec<f64>,
    border: Vec<f64>,
}

impl SparseRow {
    #[inline]
    fn hi(&self) -> usize {
        self.lo + self.vals.len() - self.off
    }

    #[inline]
    fn lead(&self) -> f64 {
        if self.off < self.vals.len() {
            self.vals[self.off]
        } else {
            0.0
        }
    }
}

/// Linear system whose rows each have a contiguous run of nonzeros among the
/// first `n_band` columns plus dense entries in `n_border` trailing columns.
///
/// Collocation Jacobians (block bidiagonal plus boundary rows plus unknown
/// parameters) and method-of-lines iteration matrices (banded plus one
/// column for the ramp variable) both have this shape.
#[derive(Debug, Clone)]
pub struct BorderedSystem {
    n_band: usize,
    n_border: usize,
    rows: Vec<SparseRow>,
}

impl BorderedSystem {
    pub fn new(n_band: usize, n_border: usize) -> Self {
        Self {
            n_band,
            n_border,
            rows: Vec::with_capacity(n_band + n_border),
        }
    }

    /// Adds a row with `vals[k]` in column `lo + k` and `border` in the
    /// trailing columns (an empty `border` means zeros). Returns the row index.
    pub fn push_row(&mut self, lo: usize, vals: Vec<f64>, border: Vec<f64>) -> usize {
        assert!(lo + vals.len() <= self.n_band, "row exceeds band columns");
        let border = if border.is_empty() {
            vec![0.0; self.n_border]
        } else {
            assert_eq!(border.len(), self.n_border);
            border
        };
        // Leading zeros would only lengthen the elimination fronts.
        let skip = vals.iter().take_while(|v| **v == 0.0).count();
        let (lo, vals) = if skip == vals.len() {
            (self.n_band, Vec::new())
        } else {
            (lo + skip, vals[skip..].to_vec())
        };
        self.rows.push(SparseRow {
            lo,
            off: 0,
            vals,
            border,
        });
        self.rows.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Gaussian elimination with partial pivoting restricted to the rows whose
    /// first nonzero sits in the current column.
    pub fn factor(self) -> Result<BorderedLu> {
        let n_band = self.n_band;
        let nb = self.n_border;
        if self.rows.len() != n_band + nb {
            return Err(Error::Mesh(alloc::format!(
                "system has {} rows for {} unknowns",
                self.rows.len(),
                n_band + nb
            )));
        }
        let mut rows = self.rows;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&i| rows[i].lo);
        let mut next = 0;
        let mut active: Vec<usize> = Vec::new();
        let mut ops: Vec<(usize, usize, f64)> = Vec::new();
        let mut pivots: Vec<usize> = Vec::with_capacity(n_band);

        for k in 0..n_band {
            while next < order.len() && rows[order[next]].lo == k {
                active.push(order[next]);
                next += 1;
            }
            let mut best = 0.0;
            let mut pos = usize::MAX;
            for (idx, &r) in active.iter().enumerate() {
                let v = rows[r].lead().abs();
                if v > best {
                    best = v;
                    pos = idx;
                }
            }
            if pos == usize::MAX || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            let p = active.swap_remove(pos);
            pivots.push(p);
            let (p_hi, p_lead) = (rows[p].hi(), rows[p].lead());
            for &t in &active {
                let lead = rows[t].lead();
                if lead != 0.0 {
                    let m = lead / p_lead;
                    ops.push((t, p, m));
                    // Split borrow: copy the pivot tail first.
                    let (p_off, p_len) = (rows[p].off, rows[p].vals.len());
                    let t_hi = rows[t].hi();
                    if p_hi > t_hi {
                        let extra = p_hi - t_hi;
                        let len = rows[t].vals.len();
                        rows[t].vals.resize(len + extra, 0.0);
                    }
                    let (pr, tr) = if p < t {
                        let (a, b) = rows.split_at_mut(t);
                        (&a[p], &mut b[0])
                    } else {
                        let (a, b) = rows.split_at_mut(p);
                        (&b[0], &mut a[t])
                    };
                    let t_off = tr.off;
                    for c in 1..(p_len - p_off) {
                        tr.vals[t_off + c] -= m * pr.vals[p_off + c];
                    }
                    for (tb, pb) in tr.border.iter_mut().zip(&pr.border) {
                        *tb -= m * pb;
                    }
                }
                let tr = &mut rows[t];
                tr.lo += 1;
                tr.off += 1;
                if tr.off >= tr.vals.len() {
                    // Band part exhausted; row now lives only in the border.
                    tr.lo = n_band;
                }
            }
            // Rows that ran out of band entries leave the active set.
            active.retain(|&t| rows[t].lo == k + 1);
        }
        let mut is_pivot = vec![false; rows.len()];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let rest: Vec<usize> = (0..rows.len()).filter(|&i| !is_pivot[i]).collect();
        if rest.len() != nb {
            return Err(Error::Singular(n_band));
        }
        let border_lu = if nb > 0 {
            let mut dense = Vec::with_capacity(nb * nb);
            for &r in &rest {
                dense.extend_from_slice(&rows[r].border);
            }
            Some(DenseLu::factor(nb, dense).map_err(|_| Error::Singular(n_band))?)
        } else {
            None
        };
        let upper = pivots
            .iter()
            .map(|&p| {
                let r = &rows[p];
                UpperRow {
                    vals: r.vals[r.off..].to_vec(),
                    border: r.border.clone(),
                }
            })
            .collect();
        Ok(BorderedLu {
            n_band,
            n_border: nb,
            ops,
            pivots,
            upper,
            rest,
            border_lu,
        })
    }
}

#[derive(Debug, Clone)]
struct UpperRow {
    /// Entries from the pivot column onwards.
    vals: Vec<f64>,
    border: Vec<f64>,
}

/// Factorization produced by [`BorderedSystem::factor`].
#[derive(Debug, Clone)]
pub struct BorderedLu {
    n_band: usize,
    n_border: usize,
    ops: Vec<(usize, usize, f64)>,
    pivots: Vec<usize>,
    upper: Vec<UpperRow>,
    rest: Vec<usize>,
    border_lu: Option<DenseLu>,
}

impl BorderedLu {
    pub fn dim(&self) -> usize {
        self.n_band + self.n_border
    }

    /// Solves in place: `b` holds the right-hand side in row order on entry
    /// and the solution (band unknowns, then border unknowns) on exit.
    pub fn solve(&self, b: &mut [f64]) {
        for &(t, p, m) in &self.ops {
            b[t] -= m * b[p];
        }
        let mut x = vec![0.0; self.dim()];
        if let Some(lu) = &self.border_lu {
            let mut rhs: Vec<f64> = self.rest.iter().map(|&r| b[r]).collect();
            lu.solve(&mut rhs);
            x[self.n_band..].copy_from_slice(&rhs);
        }
        let (band_x, border_x) = x.split_at_mut(self.n_band);
        for k in (0..self.n_band).rev() {
            let row = &self.upper[k];
            let mut s = b[self.pivots[k]];
            for (c, v) in row.vals.iter().enumerate().skip(1) {
                s -= v * band_x[k + c];
            }
            for (v, xb) in row.border.iter().zip(border_x.iter()) {
                s -= v * xb;
            }
            band_x[k] = s / row.vals[0];
        }
        b.copy_from_slice(&x);
    }
}

/// Complex eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// All eigenvalues of a general real matrix (balancing, reduction to upper
/// Hessenberg form by stabilized elimination, shifted double-step QR).
pub fn eigenvalues(m: &DenseMatrix) -> Result<Vec<Eigenvalue>> {
    let n = m.n;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = m.data.clone();
    balance(&mut a, n);
    hessenberg(&mut a, n);
    for i in 2..n {
        for j in 0..i - 1 {
            a[i * n + j] = 0.0;
        }
    }
    hqr(&mut a, n)
}

fn balance(a: &mut [f64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i * n + j] *= g;
                    }
                    for j in 0..n {
                        a[j * n + i] *= f;
                    }
                }
            }
        }
    }
}

fn hessenberg(a: &mut [f64], n: usize) {
    for m in 1..n.saturating_sub(1) {
        let mut x: f64 = 0.0;
        let mut piv = m;
        for j in m..n {
            if a[j * n + m - 1].abs() > x.abs() {
                x = a[j * n + m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..n {
                a.swap(piv * n + j, m * n + j);
            }
            for j in 0..n {
                a.swap(j * n + piv, j * n + m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i * n + m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i * n + m - 1] = y;
                    for j in m..n {
                        a[i * n + j] -= y * a[m * n + j];
                    }
                    for j in 0..n {
                        a[j * n + m] += y * a[j * n + i];
                    }
                }
            }
        }
    }
}

#[inline]
fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix. Indices below are
/// one-based to keep the classic formulation readable.
fn hqr(h: &mut [f64], n: usize) -> Result<Vec<Eigenvalue>> {
    let idx = |i: usize, j: usize| (i - 1) * n + (j - 1);
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += h[idx(i, j)].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w): (f64, f64, f64, f64);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = h[idx(l - 1, l - 1)].abs() + h[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if h[idx(l, l - 1)].abs() + s == s {
                    h[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = h[idx(nn, nn)];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                y = h[idx(nn - 1, nn - 1)];
                w = h[idx(nn, nn - 1)] * h[idx(nn - 1, nn)];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        return Err(Error::EigenNoConvergence);
                    }
                    if its == 10 || its == 20 || its == 40 {
                        t += x;
                        for i in 1..=nn {
                            h[idx(i, i)] -= x;
                        }
                        let s = h[idx(nn, nn - 1)].abs() + h[idx(nn - 1, nn - 2)].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = h[idx(m, m)];
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / h[idx(m + 1, m)] + h[idx(m, m + 1)];
                        q = h[idx(m + 1, m + 1)] - z - r - s;
                        r = h[idx(m + 2, m + 1)];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = h[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                        let v = p.abs()
                            * (h[idx(m - 1, m - 1)].abs() + z.abs() + h[idx(m + 1, m + 1)].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        h[idx(i, i - 2)] = 0.0;
                        if i != m + 2 {
                            h[idx(i, i - 3)] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = h[idx(k, k - 1)];
                            q = h[idx(k + 1, k - 1)];
                            r = 0.0;
                            if k != nn - 1 {
                                r = h[idx(k + 2, k - 1)];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    h[idx(k, k - 1)] = -h[idx(k, k - 1)];
                                }
                            } else {
                                h[idx(k, k - 1)] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = h[idx(k, j)] + q * h[idx(k + 1, j)];
                                if k != nn - 1 {
                                    p += r * h[idx(k + 2, j)];
                                    h[idx(k + 2, j)] -= p * z;
                                }
                                h[idx(k + 1, j)] -= p * y;
                                h[idx(k, j)] -= p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                p = x * h[idx(i, k)] + y * h[idx(i, k + 1)];
                                if k != nn - 1 {
                                    p += z * h[idx(i, k + 2)];
                                    h[idx(i, k + 2)] -= p * r;
                                }
                                h[idx(i, k + 1)] -= p * q;
                                h[idx(i, k)] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n)
        .map(|i| Eigenvalue {
            re: wr[i],
            im: wi[i],
        })
        .collect())
}

/// Symmetric tridiagonal matrix with diagonal `diag` and off-diagonal `off`
/// (`off[i]` couples rows `i` and `i + 1`).
#[derive(Debug, Clone)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..self.diag.len() {
            let e2 = if i == 0 { 0.0 } else { self.off[i - 1] * self.off[i - 1] };
            d = self.diag[i] - x - if i == 0 { 0.0 } else { e2 / d };
            if d == 0.0 {
                d = -f64::EPSILON * (self.diag[i].abs() + x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut rad = 0.0;
            if i > 0 {
                rad += self.off[i - 1].abs();
            }
            if i + 1 < n {
                rad += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - rad);
            hi = hi.max(self.diag[i] + rad);
        }
        (lo, hi)
    }

    /// Eigenvalues strictly above `threshold`, sorted descending, each found
    /// by bisection to absolute accuracy `tol`.
    pub fn eigenvalues_above(&self, threshold: f64, tol: f64) -> Vec<f64> {
        let n = self.diag.len();
        let (_, hi) = self.gershgorin();
        let hi = hi + 1.0;
        let below = self.count_below(threshold);
        let above = n - below;
        let mut out = Vec::with_capacity(above);
        // The k-th largest eigenvalue has exactly n - k - 1 eigenvalues above it.
        for k in 0..above {
            let target = n - k; // count_below(lambda_k + 0) == target - 1
            let (mut a, mut b) = (threshold, hi);
            while b - a > tol {
                let mid = 0.5 * (a + b);
                if self.count_below(mid) >= target {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            out.push(0.5 * (a + b));
        }
        out
    }
}

/// `[[A, c], [0, d]]` with banded `A`, a dense column `c` and a scalar `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTriangular {
    pub a: BandMatrix,
    pub c: Vec<f64>,
    pub d: f64,
}

impl BlockTriangular {
    pub fn dim(&self) -> usize {
        self.a.n + 1
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.a.n;
        let mut out = self.a.mul_vec(&x[..n]);
        for (o, c) in out.iter_mut().zip(&self.c) {
            *o += c * x[n];
        }
        out.push(self.d * x[n]);
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.a.n;
        let mut m = DenseMatrix::zeros(n + 1);
        for i in 0..n {
            let (lo, vals) = self.a.row(i);
            for (k, v) in vals.iter().enumerate() {
                m.set(i, lo + k, *v);
            }
            m.set(i, n, self.c[i]);
        }
        m.set(n, n, self.d);
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[test]
    fn dense_lu_solves() {
        let m = dense_from_fn(5, |i, j| if i == j { 4.0 } else { 1.0 / (1.0 + i as f64 + 2.0 * j as f64) });
        let x: Vec<f64> = (0..5).map(|i| i as f64 - 1.5).collect();
        let mut b = m.mul_vec(&x);
        DenseLu::factor(5, m.data.clone()).unwrap().solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn bordered_solve_matches_dense() {
        // Band rows with a two-column border and rows deliberately out of order.
        let nb = 7;
        let border = 2;
        let n = nb + border;
        let full = dense_from_fn(n, |i, j| {
            let base = ((i * 7 + j * 3) % 11) as f64 - 5.0;
            if j >= nb {
                base * 0.3
            } else if i < nb && (j as isize - i as isize).abs() <= 1 {
                base + if i == j { 12.0 } else { 0.0 }
            } else if i >= nb && (j == 0 || j == nb - 1) {
                base
            } else {
                0.0
            }
        });
        let mut sys = BorderedSystem::new(nb, border);
        let mut row_order: Vec<usize> = (0..n).collect();
        row_order.reverse();
        for &i in &row_order {
            let nz: Vec<usize> = (0..nb).filter(|&j| full.get(i, j) != 0.0).collect();
            let lo = *nz.first().unwrap_or(&0);
            let hi = nz.last().map(|h| h + 1).unwrap_or(0);
            let vals: Vec<f64> = (lo..hi.max(lo)).map(|j| full.get(i, j)).collect();
            let bord: Vec<f64> = (nb..n).map(|j| full.get(i, j)).collect();
            sys.push_row(lo, vals, bord);
        }
        let lu = sys.factor().unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let b_full = full.mul_vec(&x);
        let mut b: Vec<f64> = row_order.iter().map(|&i| b_full[i]).collect();
        lu.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-11, "{u} vs {v}");
        }
    }

    #[test]
    fn band_matrix_roundtrip() {
        let mut m = BandMatrix::zeros(6, 2, 1);
        for i in 0..6 {
            let (lo, hi) = m.row_range(i);
            for j in lo..hi {
                m.set(i, j, (i * 10 + j) as f64 + 1.0);
            }
        }
        let x = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5];
        let dense = m.to_dense();
        assert_eq!(m.mul_vec(&x), dense.mul_vec(&x));
        let t = m.transpose();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(t.get(i, j), m.get(j, i));
            }
        }
        let lu = m.factor_shifted(0.0).unwrap();
        let mut b = dense.mul_vec(&x);
        lu.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenvalues_of_companion() {
        // (x-1)(x-2)(x-3)(x^2+1): x^5 - 6x^4 + 12x^3 - 12x^2 + 11x - 6
        let c = [-6.0, 11.0, -12.0, 12.0, -6.0];
        let mut m = DenseMatrix::zeros(5);
        for i in 1..5 {
            m.set(i, i - 1, 1.0);
        }
        for (i, ci) in c.iter().enumerate() {
            m.set(i, 4, -ci);
        }
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        let expect = [(0.0, -1.0), (0.0, 1.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)];
        for (e, (re, im)) in ev.iter().zip(expect) {
            assert!((e.re - re).abs() < 1e-9 && (e.im - im).abs() < 1e-9, "{e:?}");
        }
    }

    #[test]
    fn eigenvalues_of_symmetric_match_sturm() {
        let n = 40;
        let diag: Vec<f64> = (0..n).map(|i| ((i * 37) % 13) as f64 * 0.1 - 0.6).collect();
        let off: Vec<f64> = (0..n - 1).map(|i| 0.3 + 0.01 * i as f64).collect();
        let tri = SymTridiagonal { diag: diag.clone(), off: off.clone() };
        let mut dense = DenseMatrix::zeros(n);
        for i in 0..n {
            dense.set(i, i, diag[i]);
            if i + 1 < n {
                dense.set(i, i + 1, off[i]);
                dense.set(i + 1, i, off[i]);
            }
        }
        let mut qr: Vec<f64> = eigenvalues(&dense).unwrap().iter().map(|e| e.re).collect();
        qr.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let sturm = tri.eigenvalues_above(-100.0, 1e-13);
        assert_eq!(sturm.len(), n);
        for (a, b) in qr.iter().zip(&sturm) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert_eq!(tri.count_below(qr[n / 2] + 1e-9), n - n / 2);
    }
}
