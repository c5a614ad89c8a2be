//! The slow staircase phi below a divergent f, its counting function Phi, the
//! jump set Gamma, and the permutation pi that sends most n far to the right
//! (pi(n) = Phi(n)) while filling the gaps at the jumps with the least unused
//! integer. Omega(k) = {1..k} n {pi(1)..pi(k)} then grows like phi.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// The jump points n_1 = 1 < n_2 < ... of phi and its values on 1..=len.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhiTable {
    /// n_v for v = 1, 2, ...: n_{v+1} is the least n >= 2 n_v with f(n) >= 2^v.
    pub jumps: Vec<usize>,
    /// `values[n-1]` = phi(n).
    pub values: Vec<usize>,
}

impl PhiTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// phi(n) for 1 <= n <= len; phi(0) = 0.
    pub fn phi(&self, n: usize) -> usize {
        if n == 0 {
            0
        } else {
            self.values[n - 1]
        }
    }
}

/// Builds phi from f tabulated as `f[n-1]` = f(n) on 1..=n_max.
///
/// phi is the unit-jump staircase with jumps at n_v; since f(n_v) >= 2^{v-1},
/// phi <= 1 + log2 f, and n_{v+1} >= 2 n_v gives phi(2n) <= phi(n) + 1.
pub fn build_phi(f: &[f64], n_max: usize) -> Result<PhiTable> {
    if n_max == 0 || f.len() < n_max {
        return Err(Error::invalid(format!(
            "f is tabulated on 1..={} but phi is requested on 1..={n_max}",
            f.len()
        )));
    }
    let f = &f[..n_max];
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if let Some(i) = f.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::invalid(format!("f decreases at n = {}", i + 2)));
    }
    if f[n_max - 1] < 1.0 {
        return Err(Error::invalid("f must reach 1 on the table"));
    }
    if f[n_max - 1] <= f[0] {
        return Err(Error::invalid("f is constant on the table, hence not divergent"));
    }
    let mut jumps = vec![1];
    loop {
        let v = jumps.len() as i32;
        let target = 2f64.powi(v);
        let from = 2 * jumps[jumps.len() - 1];
        match (from..=n_max).find(|&n| f[n - 1] >= target) {
            Some(n) => jumps.push(n),
            None => break,
        }
    }
    let mut values = Vec::with_capacity(n_max);
    let mut v = 0;
    for n in 1..=n_max {
        if v < jumps.len() && jumps[v] == n {
            v += 1;
        }
        values.push(v);
    }
    Ok(PhiTable { jumps, values })
}

/// Phi(n) = n_{n+1} - 1, or a marker when n_{n+1} lies past the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum PiValue {
    Known(usize),
    /// Phi(n) for this n exceeds every tabulated integer.
    Beyond(usize),
}

impl PiValue {
    pub fn known(self) -> Option<usize> {
        match self {
            PiValue::Known(k) => Some(k),
            PiValue::Beyond(_) => None,
        }
    }

    fn label(self) -> String {
        match self {
            PiValue::Known(k) => k.to_string(),
            PiValue::Beyond(n) => format!("B{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationSpec {
    /// `f[n-1]` = f(n) on the table.
    pub f: Vec<f64>,
    pub phi: PhiTable,
    /// `big_phi[n-1]` = Phi(n).
    pub big_phi: Vec<PiValue>,
    /// `in_gamma[n-1]`: n is a jump of phi.
    pub in_gamma: Vec<bool>,
    /// `pi[n-1]` = pi(n).
    pub pi: Vec<PiValue>,
    /// `free_state[n-1]`: least integer not among pi(1..=n).
    pub free_state: Vec<usize>,
    /// `omega[k-1]` = |Omega(k)|.
    pub omega: Vec<usize>,
}

impl PermutationSpec {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn pi(&self, n: usize) -> PiValue {
        self.pi[n - 1]
    }

    pub fn omega(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.omega[k - 1]
        }
    }

    pub fn phi(&self, n: usize) -> usize {
        self.phi.phi(n)
    }

    pub fn f(&self, n: usize) -> f64 {
        self.f[n - 1]
    }

    /// The elements of Gamma on the table.
    pub fn gamma(&self) -> Vec<usize> {
        (1..=self.len()).filter(|&n| self.in_gamma[n - 1]).collect()
    }

    /// Omega(k) as a sorted set.
    pub fn omega_set(&self, k: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.pi[..k]
            .iter()
            .filter_map(|p| p.known())
            .filter(|&v| v <= k)
            .collect();
        s.sort_unstable();
        s
    }

    /// Text table `n phi Phi inGamma pi` for n <= rows.
    pub fn to_text(&self, rows: usize) -> String {
        let mut s = String::from("# n phi Phi inGamma pi\n");
        for n in 1..=rows.min(self.len()) {
            writeln!(
                s,
                "{} {} {} {} {}",
                n,
                self.phi(n),
                self.big_phi[n - 1].label(),
                u8::from(self.in_gamma[n - 1]),
                self.pi[n - 1].label()
            )
            .unwrap();
        }
        s
    }
}

/// pi on 1..=phi.len(): pi(n) = least unused integer for n in Gamma, Phi(n) otherwise.
pub fn build_permutation(phi: &PhiTable, f: &[f64]) -> Result<PermutationSpec> {
    let n_max = phi.len();
    if f.len() < n_max {
        return Err(Error::invalid("f table shorter than phi table"));
    }
    let big_phi: Vec<PiValue> = (1..=n_max)
        .map(|n| match phi.jumps.get(n) {
            Some(&j) => PiValue::Known(j - 1),
            None => PiValue::Beyond(n),
        })
        .collect();
    let mut in_gamma = vec![false; n_max];
    for &j in &phi.jumps {
        in_gamma[j - 1] = true;
    }
    // values in use; every Known value is < n_max because n_{n+1} <= n_max
    let mut used = vec![false; n_max + 2];
    let mut pi = Vec::with_capacity(n_max);
    let mut free_state = Vec::with_capacity(n_max);
    let mut cursor = 1;
    for n in 1..=n_max {
        let v = if in_gamma[n - 1] {
            while used[cursor] {
                cursor += 1;
            }
            PiValue::Known(cursor)
        } else {
            big_phi[n - 1]
        };
        if let PiValue::Known(k) = v {
            if used[k] {
                return Err(Error::Postcondition {
                    invariant: "pi_injective",
                    detail: format!("pi({n}) = {k} repeats an earlier value"),
                });
            }
            used[k] = true;
        }
        while used[cursor] {
            cursor += 1;
        }
        pi.push(v);
        free_state.push(cursor);
    }

    // |Omega(k)| = |Omega(k-1)| + [pi^{-1}(k) <= k] + [pi(k) < k]
    let mut inv = vec![usize::MAX; n_max + 1];
    for (i, p) in pi.iter().enumerate() {
        if let PiValue::Known(k) = *p {
            if k <= n_max {
                inv[k] = i + 1;
            }
        }
    }
    let mut omega = Vec::with_capacity(n_max);
    let mut w = 0;
    for k in 1..=n_max {
        if inv[k] <= k {
            w += 1;
        }
        if matches!(pi[k - 1], PiValue::Known(v) if v < k) {
            w += 1;
        }
        omega.push(w);
    }
    Ok(PermutationSpec {
        f: f[..n_max].to_vec(),
        phi: phi.clone(),
        big_phi,
        in_gamma,
        pi,
        free_state,
        omega,
    })
}

/// Builds phi and pi from f in one step.
pub fn permutation_from_f(f: &[f64], n_max: usize) -> Result<PermutationSpec> {
    let phi = build_phi(f, n_max)?;
    build_permutation(&phi, f)
}

/// |{n : Phi(n) <= m}| = phi(m + 1) - 1 for every m with m + 1 on the table.
/// Returns the first m where the count disagrees.
pub fn check_phi_count(spec: &PermutationSpec) -> Option<usize> {
    // Phi(n) >= n, so only n <= m can contribute
    let mut count = 0;
    let mut by_value = vec![0usize; spec.len() + 1];
    for p in &spec.big_phi {
        if let PiValue::Known(v) = *p {
            if v <= spec.len() {
                by_value[v] += 1;
            }
        }
    }
    for (m, &k) in by_value.iter().enumerate().take(spec.len()).skip(1) {
        count += k;
        if count + 1 != spec.phi(m + 1) {
            return Some(m);
        }
    }
    None
}

/// One row of the Omega growth table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaRow {
    pub m: usize,
    pub omega: usize,
    pub two_phi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaStats {
    pub rows: Vec<OmegaRow>,
    /// (c, [(n, |Omega(c n)| / f(n))]) for each c.
    pub ratios: Vec<(usize, Vec<(usize, f64)>)>,
}

impl OmegaStats {
    /// Whether every ratio series is strictly decreasing along the grid.
    pub fn ratios_decreasing(&self) -> bool {
        self.ratios
            .iter()
            .all(|(_, s)| s.windows(2).all(|w| w[1].1 < w[0].1))
    }
}

/// Integers lo = g_0 < g_1 < ... <= hi spaced `per_decade` to a factor of ten.
pub fn log_grid(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    if lo == 0 || hi < lo || per_decade == 0 {
        return out;
    }
    let steps = ((hi as f64 / lo as f64).log10() * per_decade as f64).round() as usize;
    for i in 0..=steps {
        let v = (lo as f64 * 10f64.powf(i as f64 / per_decade as f64)).round() as usize;
        let v = v.min(hi);
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

/// |Omega(m)| against 2 phi(m) on `grid` and the ratios |Omega(c n)| / f(n).
/// Every tabulated m is checked against |Omega(m)| <= 2 phi(m).
pub fn omega_stats(spec: &PermutationSpec, cs: &[usize], grid: &[usize]) -> Result<OmegaStats> {
    let top = grid.iter().max().copied().unwrap_or(0);
    let need = top * cs.iter().max().copied().unwrap_or(1);
    if need > spec.len() || grid.contains(&0) {
        return Err(Error::invalid(format!(
            "table covers 1..={} but the grid needs 1..={need}",
            spec.len()
        )));
    }
    if let Some(m) = (1..=spec.len()).find(|&m| spec.omega(m) > 2 * spec.phi(m)) {
        return Err(Error::Postcondition {
            invariant: "omega_at_most_two_phi",
            detail: format!(
                "|Omega({m})| = {} > 2 phi({m}) = {}",
                spec.omega(m),
                2 * spec.phi(m)
            ),
        });
    }
    let rows = grid
        .iter()
        .map(|&m| OmegaRow {
            m,
            omega: spec.omega(m),
            two_phi: 2 * spec.phi(m),
        })
        .collect();
    let ratios = cs
        .iter()
        .map(|&c| {
            let s = grid
                .iter()
                .map(|&n| (n, spec.omega(c * n) as f64 / spec.f(n)))
                .collect();
            (c, s)
        })
        .collect();
    Ok(OmegaStats { rows, ratios })
}
