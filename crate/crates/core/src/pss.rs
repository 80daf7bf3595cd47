//! Packed Shamir secret sharing.
//!
//! A degree-`d'` packed sharing of `x = (x_0, .., x_{k-1})` is a polynomial
//! `f` of degree at most `d'` with `f(s_i) = x_i`, where `s_i = -i mod p` are
//! the secret positions and party `j` (1-based) holds `f(j)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Fp;

/// One party's share of a packed sharing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PackedShare<const L: u32> {
    pub owner: usize,
    pub value: Fp<L>,
    pub degree: usize,
}

impl<const L: u32> PackedShare<L> {
    pub fn new(owner: usize, value: Fp<L>, degree: usize) -> Self {
        PackedShare { owner, value, degree }
    }

    /// A sharing of the all-`c` vector that every party can write down locally.
    pub fn constant(owner: usize, c: Fp<L>, degree: usize) -> Self {
        PackedShare { owner, value: c, degree }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.owner, other.owner);
        PackedShare::new(self.owner, self.value + other.value, self.degree.max(other.degree))
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.owner, other.owner);
        PackedShare::new(self.owner, self.value - other.value, self.degree.max(other.degree))
    }

    pub fn scale(&self, c: Fp<L>) -> Self {
        PackedShare::new(self.owner, self.value * c, self.degree)
    }

    /// Adds a public constant to every slot.
    pub fn add_const(&self, c: Fp<L>) -> Self {
        PackedShare::new(self.owner, self.value + c, self.degree)
    }

    /// Local product. The degree is the sum of the operand degrees.
    pub fn mul(&self, other: &Self, n: usize) -> Result<Self> {
        debug_assert_eq!(self.owner, other.owner);
        let degree = self.degree + other.degree;
        if degree > n - 1 {
            return Err(Error::DegreeOverflow(degree, n - 1));
        }
        Ok(PackedShare::new(self.owner, self.value * other.value, degree))
    }
}

/// A regular Shamir share of a single secret stored at `position`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShamirShareAt<const L: u32> {
    pub owner: usize,
    pub value: Fp<L>,
    pub degree: usize,
    pub position: Fp<L>,
}

/// The public vector with a one in slot `index` and zeros elsewhere, together
/// with its evaluations at every party point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitVectorConst<const L: u32> {
    pub index: usize,
    pub evals: Vec<Fp<L>>,
}

/// Sharing parameters and cached Lagrange tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PssParams {
    pub n: usize,
    pub d: usize,
    pub k: usize,
}

impl PssParams {
    /// Validates `n = 2d + 1` and `2 <= k <= d`.
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n < 5 || n % 2 == 0 {
            return Err(Error::InvalidConfig(format!("n = {n} must be odd and at least 5")));
        }
        let d = (n - 1) / 2;
        if k < 2 || k > d {
            return Err(Error::InvalidConfig(format!("k = {k} must satisfy 2 <= k <= d = {d}")));
        }
        Ok(PssParams { n, d, k })
    }

    /// Corruption threshold `t = d - k + 1`.
    pub fn t(&self) -> usize {
        self.d - self.k + 1
    }
}

struct ShareTable<const L: u32> {
    /// number of parties (1..=free) whose shares are sampled uniformly
    free: usize,
    /// rows for parties free+1..=n over the basis [secrets..., free parties...]
    rows: Vec<Vec<Fp<L>>>,
}

struct ReconTable<const L: u32> {
    /// rows for the secret positions over parties 1..=degree+1
    to_secrets: Vec<Vec<Fp<L>>>,
    /// rows for the remaining parties, used for consistency checks
    to_rest: Vec<Vec<Fp<L>>>,
}

struct ShamirTable<const L: u32> {
    /// parties degree+1..=n over the basis [position, parties 1..=degree]
    share_rows: Vec<Vec<Fp<L>>>,
    /// the position over parties 1..=degree+1
    recon_row: Vec<Fp<L>>,
}

pub struct PackingConfig<const L: u32> {
    params: PssParams,
    party_points: Vec<Fp<L>>,
    secret_positions: Vec<Fp<L>>,
    /// `unit_evals[i][j-1] = E_i(j)`
    unit_evals: Vec<Vec<Fp<L>>>,
    share_tables: Vec<OnceLock<ShareTable<L>>>,
    recon_tables: Vec<OnceLock<ReconTable<L>>>,
    shamir_tables: Mutex<HashMap<(u64, usize), Arc<ShamirTable<L>>>>,
    convert_cache: Mutex<HashMap<(u64, u64), Arc<Vec<Fp<L>>>>>,
}

impl<const L: u32> std::fmt::Debug for PackingConfig<L> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PackingConfig(n={}, d={}, k={}, p=2^{}-1)", self.n(), self.d(), self.k(), L)
    }
}

/// `coeffs[y][b]` such that `f(targets[y]) = sum_b coeffs[y][b] f(basis[b])`
/// for every polynomial of degree below `basis.len()`.
pub fn lagrange_coeffs<const L: u32>(basis: &[Fp<L>], targets: &[Fp<L>]) -> Result<Vec<Vec<Fp<L>>>> {
    let m = basis.len();
    let mut weights = Vec::with_capacity(m);
    for b in 0..m {
        let mut den = Fp::ONE;
        for c in 0..m {
            if c != b {
                den *= basis[b] - basis[c];
            }
        }
        weights.push(den.inv()?);
    }
    let mut out = Vec::with_capacity(targets.len());
    for &y in targets {
        if let Some(pos) = basis.iter().position(|&x| x == y) {
            let mut row = vec![Fp::ZERO; m];
            row[pos] = Fp::ONE;
            out.push(row);
            continue;
        }
        let num: Fp<L> = basis.iter().fold(Fp::ONE, |acc, &x| acc * (y - x));
        let mut row = Vec::with_capacity(m);
        for b in 0..m {
            row.push(num * (y - basis[b]).inv()? * weights[b]);
        }
        out.push(row);
    }
    Ok(out)
}

fn apply_row<const L: u32>(row: &[Fp<L>], values: &[Fp<L>]) -> Fp<L> {
    Fp::dot(row, values)
}

impl<const L: u32> PackingConfig<L> {
    pub fn new(params: PssParams) -> Result<Arc<Self>> {
        let PssParams { n, k, .. } = params;
        if (n + k) as u64 >= Fp::<L>::MODULUS {
            return Err(Error::InvalidConfig(format!("field too small for n = {n}, k = {k}")));
        }
        let party_points: Vec<Fp<L>> = (1..=n as u64).map(Fp::new).collect();
        let secret_positions: Vec<Fp<L>> = (0..k as u64).map(|i| -Fp::new(i)).collect();
        let e = lagrange_coeffs(&secret_positions, &party_points)?;
        // transpose into [i][party]
        let unit_evals = (0..k).map(|i| (0..n).map(|j| e[j][i]).collect()).collect();
        Ok(Arc::new(PackingConfig {
            params,
            party_points,
            secret_positions,
            unit_evals,
            share_tables: (0..n).map(|_| OnceLock::new()).collect(),
            recon_tables: (0..n).map(|_| OnceLock::new()).collect(),
            shamir_tables: Mutex::new(HashMap::new()),
            convert_cache: Mutex::new(HashMap::new()),
        }))
    }

    pub fn params(&self) -> PssParams {
        self.params
    }
    pub fn n(&self) -> usize {
        self.params.n
    }
    pub fn d(&self) -> usize {
        self.params.d
    }
    pub fn k(&self) -> usize {
        self.params.k
    }
    pub fn t(&self) -> usize {
        self.params.t()
    }
    pub fn party_point(&self, party: usize) -> Fp<L> {
        self.party_points[party - 1]
    }
    pub fn secret_position(&self, i: usize) -> Fp<L> {
        self.secret_positions[i]
    }
    pub fn secret_positions(&self) -> &[Fp<L>] {
        &self.secret_positions
    }

    /// `E_i(party)`.
    pub fn unit_eval(&self, i: usize, party: usize) -> Fp<L> {
        self.unit_evals[i][party - 1]
    }

    pub fn unit_vector(&self, index: usize) -> UnitVectorConst<L> {
        UnitVectorConst { index, evals: self.unit_evals[index].clone() }
    }

    /// Evaluation at `party` of the degree-(k-1) polynomial through the public
    /// vector `c`.
    pub fn public_eval(&self, c: &[Fp<L>], party: usize) -> Fp<L> {
        debug_assert!(c.len() <= self.k());
        c.iter().enumerate().fold(Fp::ZERO, |acc, (i, &ci)| acc + ci * self.unit_evals[i][party - 1])
    }

    fn check_degree(&self, degree: usize) -> Result<()> {
        if degree + 1 < self.k() || degree >= self.n() {
            return Err(Error::DegreeOutOfRange { degree, min: self.k() - 1, max: self.n() - 1 });
        }
        Ok(())
    }

    fn share_table(&self, degree: usize) -> Result<&ShareTable<L>> {
        self.check_degree(degree)?;
        if let Some(t) = self.share_tables[degree].get() {
            return Ok(t);
        }
        let free = degree + 1 - self.k();
        let mut basis = self.secret_positions.clone();
        basis.extend_from_slice(&self.party_points[..free]);
        let rows = lagrange_coeffs(&basis, &self.party_points[free..])?;
        Ok(self.share_tables[degree].get_or_init(|| ShareTable { free, rows }))
    }

    fn recon_table(&self, degree: usize) -> Result<&ReconTable<L>> {
        self.check_degree(degree)?;
        if let Some(t) = self.recon_tables[degree].get() {
            return Ok(t);
        }
        let basis = &self.party_points[..=degree];
        let to_secrets = lagrange_coeffs(basis, &self.secret_positions)?;
        let to_rest = lagrange_coeffs(basis, &self.party_points[degree + 1..])?;
        Ok(self.recon_tables[degree].get_or_init(|| ReconTable { to_secrets, to_rest }))
    }

    /// Shares `secrets` (at most `k`, zero padded) at `degree`. Returns the
    /// share of party `j` at index `j - 1`.
    pub fn share<R: Rng + ?Sized>(
        &self,
        secrets: &[Fp<L>],
        degree: usize,
        rng: &mut R,
    ) -> Result<Vec<PackedShare<L>>> {
        let values = self.share_values(secrets, degree, rng)?;
        Ok(values.into_iter().enumerate().map(|(j, v)| PackedShare::new(j + 1, v, degree)).collect())
    }

    /// Same as [`share`](Self::share) without the share wrappers.
    pub fn share_values<R: Rng + ?Sized>(
        &self,
        secrets: &[Fp<L>],
        degree: usize,
        rng: &mut R,
    ) -> Result<Vec<Fp<L>>> {
        let k = self.k();
        if secrets.len() > k {
            return Err(Error::ShapeMismatch(format!("{} secrets for k = {k}", secrets.len())));
        }
        let table = self.share_table(degree)?;
        let mut basis = Vec::with_capacity(k + table.free);
        basis.extend_from_slice(secrets);
        basis.resize(k, Fp::ZERO);
        let mut out = Vec::with_capacity(self.n());
        for _ in 0..table.free {
            let r = Fp::random(rng);
            basis.push(r);
            out.push(r);
        }
        for row in &table.rows {
            out.push(apply_row(row, &basis));
        }
        Ok(out)
    }

    /// Reconstructs from shares of one sharing. Any shares beyond the first
    /// `degree + 1` are checked against the interpolated polynomial.
    pub fn reconstruct(&self, shares: &[PackedShare<L>]) -> Result<Vec<Fp<L>>> {
        let degree = match shares.first() {
            Some(s) => s.degree,
            None => return Err(Error::TooFewShares { needed: 1, got: 0 }),
        };
        for s in shares {
            if s.degree != degree {
                return Err(Error::DegreeMismatch(degree, s.degree));
            }
        }
        let mut by_owner: Vec<Option<Fp<L>>> = vec![None; self.n()];
        for s in shares {
            if s.owner == 0 || s.owner > self.n() {
                return Err(Error::OutOfRange(format!("owner {}", s.owner)));
            }
            if by_owner[s.owner - 1].replace(s.value).is_some() {
                return Err(Error::DuplicateOwner(s.owner));
            }
        }
        self.reconstruct_sparse(&by_owner, degree)
    }

    /// Fast path for a full vector of shares indexed by party.
    pub fn reconstruct_values(&self, values: &[Fp<L>], degree: usize) -> Result<Vec<Fp<L>>> {
        if values.len() == self.n() {
            let table = self.recon_table(degree)?;
            let basis = &values[..=degree];
            for (row, &v) in table.to_rest.iter().zip(&values[degree + 1..]) {
                if apply_row(row, basis) != v {
                    return Err(Error::InconsistentDegree(degree));
                }
            }
            return Ok(table.to_secrets.iter().map(|r| apply_row(r, basis)).collect());
        }
        let opts: Vec<Option<Fp<L>>> = values.iter().map(|&v| Some(v)).collect();
        self.reconstruct_sparse(&opts, degree)
    }

    fn reconstruct_sparse(&self, by_owner: &[Option<Fp<L>>], degree: usize) -> Result<Vec<Fp<L>>> {
        self.check_degree(degree)?;
        let have = by_owner.iter().filter(|v| v.is_some()).count();
        if have < degree + 1 {
            return Err(Error::TooFewShares { needed: degree + 1, got: have });
        }
        let prefix_full = by_owner.iter().take(degree + 1).all(|v| v.is_some());
        if prefix_full {
            let table = self.recon_table(degree)?;
            let basis: Vec<Fp<L>> = by_owner[..=degree].iter().map(|v| v.unwrap()).collect();
            for (row, v) in table.to_rest.iter().zip(&by_owner[degree + 1..]) {
                if let Some(v) = v {
                    if apply_row(row, &basis) != *v {
                        return Err(Error::InconsistentDegree(degree));
                    }
                }
            }
            return Ok(table.to_secrets.iter().map(|r| apply_row(r, &basis)).collect());
        }
        // arbitrary subset: interpolate on the fly
        let owners: Vec<usize> = (0..by_owner.len()).filter(|&j| by_owner[j].is_some()).collect();
        let basis_pts: Vec<Fp<L>> = owners[..=degree].iter().map(|&j| self.party_points[j]).collect();
        let basis_vals: Vec<Fp<L>> = owners[..=degree].iter().map(|&j| by_owner[j].unwrap()).collect();
        let extra_pts: Vec<Fp<L>> = owners[degree + 1..].iter().map(|&j| self.party_points[j]).collect();
        for (row, &j) in lagrange_coeffs(&basis_pts, &extra_pts)?.iter().zip(&owners[degree + 1..]) {
            if apply_row(row, &basis_vals) != by_owner[j].unwrap() {
                return Err(Error::InconsistentDegree(degree));
            }
        }
        let rows = lagrange_coeffs(&basis_pts, &self.secret_positions)?;
        Ok(rows.iter().map(|r| apply_row(r, &basis_vals)).collect())
    }

    /// Multiplies a share by the public vector `c` (a degree `k-1` sharing of
    /// itself). The degree grows by `k - 1`.
    pub fn mul_public_vec(&self, share: &PackedShare<L>, c: &[Fp<L>]) -> Result<PackedShare<L>> {
        let degree = share.degree + self.k() - 1;
        if degree > self.n() - 1 {
            return Err(Error::DegreeOverflow(degree, self.n() - 1));
        }
        Ok(PackedShare::new(share.owner, share.value * self.public_eval(c, share.owner), degree))
    }

    /// `sum_i coeffs[i] * shares[i] + offset` slot-wise (offset is added to every slot).
    pub fn local_linear(
        &self,
        shares: &[PackedShare<L>],
        coeffs: &[Fp<L>],
        offset: Fp<L>,
    ) -> Result<PackedShare<L>> {
        if shares.is_empty() || shares.len() != coeffs.len() {
            return Err(Error::ShapeMismatch("local_linear operand counts".into()));
        }
        let owner = shares[0].owner;
        let degree = shares.iter().map(|s| s.degree).max().unwrap();
        let mut acc = offset;
        for (s, &c) in shares.iter().zip(coeffs) {
            if s.owner != owner {
                return Err(Error::ShapeMismatch("shares from different owners".into()));
            }
            acc += s.value * c;
        }
        Ok(PackedShare::new(owner, acc, degree))
    }

    /// Combines Shamir shares of `x_i` stored at `s_i` (one per slot, in slot
    /// order) into a packed share of `(x_0, .., x_{k-1})` of degree `t + k - 1`.
    pub fn combine_shamir(&self, shares: &[ShamirShareAt<L>]) -> Result<PackedShare<L>> {
        if shares.len() != self.k() {
            return Err(Error::ShapeMismatch(format!("{} Shamir shares for k = {}", shares.len(), self.k())));
        }
        let owner = shares[0].owner;
        let degree = shares[0].degree;
        let mut acc = Fp::ZERO;
        for (i, s) in shares.iter().enumerate() {
            if s.position != self.secret_positions[i] {
                return Err(Error::PositionMismatch);
            }
            if s.degree != degree {
                return Err(Error::DegreeMismatch(degree, s.degree));
            }
            acc += self.unit_eval(i, owner) * s.value;
        }
        let out = degree + self.k() - 1;
        if out > self.n() - 1 {
            return Err(Error::DegreeOverflow(out, self.n() - 1));
        }
        Ok(PackedShare::new(owner, acc, out))
    }

    /// Given packed shares of `x^0 .. x^{k-1}`, produces a packed share of
    /// `(x^0_0, x^1_1, .., x^{k-1}_{k-1})` of degree `degree + k - 1`.
    pub fn select_diagonal(&self, shares: &[PackedShare<L>]) -> Result<PackedShare<L>> {
        if shares.len() != self.k() {
            return Err(Error::ShapeMismatch("select_diagonal needs k shares".into()));
        }
        let owner = shares[0].owner;
        let degree = shares.iter().map(|s| s.degree).max().unwrap() + self.k() - 1;
        if degree > self.n() - 1 {
            return Err(Error::DegreeOverflow(degree, self.n() - 1));
        }
        let v = shares.iter().enumerate().fold(Fp::ZERO, |a, (i, s)| a + self.unit_eval(i, owner) * s.value);
        Ok(PackedShare::new(owner, v, degree))
    }

    /// Factors `prod_{j != i} (a - j) / (b - j)` for moving slot `a` of a
    /// packed share to position `b`; indexed by party.
    fn convert_factors(&self, a: Fp<L>, b: Fp<L>) -> Result<Arc<Vec<Fp<L>>>> {
        let key = (a.value(), b.value());
        if let Some(v) = self.convert_cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let n = self.n();
        let mut row = Vec::with_capacity(n);
        for i in 1..=n {
            let mut num = Fp::ONE;
            let mut den = Fp::ONE;
            for j in 1..=n {
                if j != i {
                    let pj = self.party_point(j);
                    num *= a - pj;
                    den *= b - pj;
                }
            }
            row.push(num * den.inv()?);
        }
        let v = Arc::new(row);
        self.convert_cache.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }

    /// Turns a packed share into a regular Shamir share of slot `slot` stored
    /// at position `target`. The rescaled shares lie on a polynomial of degree
    /// `n - 1 = 2d`. The target must differ from every party point.
    pub fn sh_convert(&self, share: &PackedShare<L>, slot: usize, target: Fp<L>) -> Result<ShamirShareAt<L>> {
        if slot >= self.k() {
            return Err(Error::OutOfRange(format!("slot {slot}")));
        }
        if self.party_points.contains(&target) {
            return Err(Error::PositionMismatch);
        }
        let f = self.convert_factors(self.secret_positions[slot], target)?;
        Ok(ShamirShareAt {
            owner: share.owner,
            value: share.value * f[share.owner - 1],
            degree: self.n() - 1,
            position: target,
        })
    }

    /// Converts every slot to the default target `p - k`.
    pub fn sh_convert_all(&self, share: &PackedShare<L>) -> Result<Vec<ShamirShareAt<L>>> {
        let target = -Fp::new(self.k() as u64);
        (0..self.k()).map(|i| self.sh_convert(share, i, target)).collect()
    }

    /// Shares a vector `k` slots at a time (the last share zero padded).
    /// Returns `[party - 1][share]`.
    pub fn share_vector<R: Rng + ?Sized>(
        &self,
        values: &[Fp<L>],
        degree: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<PackedShare<L>>>> {
        let mut out: Vec<Vec<PackedShare<L>>> = vec![Vec::with_capacity(values.len().div_ceil(self.k())); self.n()];
        for chunk in values.chunks(self.k()) {
            for (j, s) in self.share(chunk, degree, rng)?.into_iter().enumerate() {
                out[j].push(s);
            }
        }
        Ok(out)
    }

    /// Inverse of [`share_vector`](Self::share_vector): `per_party[j - 1]` holds
    /// party `j`'s shares. Returns `k` values per share.
    pub fn reconstruct_vector(&self, per_party: &[Vec<PackedShare<L>>]) -> Result<Vec<Fp<L>>> {
        let count = per_party.first().map_or(0, |v| v.len());
        if per_party.iter().any(|v| v.len() != count) {
            return Err(Error::ShapeMismatch("parties hold different share counts".into()));
        }
        let mut out = Vec::with_capacity(count * self.k());
        for i in 0..count {
            let col: Vec<PackedShare<L>> = per_party.iter().map(|v| v[i]).collect();
            out.extend(self.reconstruct(&col)?);
        }
        Ok(out)
    }

    fn shamir_table(&self, position: Fp<L>, degree: usize) -> Result<Arc<ShamirTable<L>>> {
        if degree >= self.n() {
            return Err(Error::DegreeOutOfRange { degree, min: 0, max: self.n() - 1 });
        }
        let key = (position.value(), degree);
        if let Some(t) = self.shamir_tables.lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let mut basis = vec![position];
        basis.extend_from_slice(&self.party_points[..degree]);
        let share_rows = lagrange_coeffs(&basis, &self.party_points[degree..])?;
        let recon_row = lagrange_coeffs(&self.party_points[..=degree], &[position])?.remove(0);
        let t = Arc::new(ShamirTable { share_rows, recon_row });
        self.shamir_tables.lock().unwrap().insert(key, t.clone());
        Ok(t)
    }

    /// Shamir sharing of one secret at `position`; indexed by party.
    pub fn shamir_share<R: Rng + ?Sized>(
        &self,
        secret: Fp<L>,
        position: Fp<L>,
        degree: usize,
        rng: &mut R,
    ) -> Result<Vec<Fp<L>>> {
        let table = self.shamir_table(position, degree)?;
        let mut basis = Vec::with_capacity(degree + 1);
        basis.push(secret);
        let mut out = Vec::with_capacity(self.n());
        for _ in 0..degree {
            let r = Fp::random(rng);
            basis.push(r);
            out.push(r);
        }
        for row in &table.share_rows {
            out.push(apply_row(row, &basis));
        }
        Ok(out)
    }

    /// Reconstructs a Shamir secret at `position` from a full share vector,
    /// checking consistency of the extra shares.
    pub fn shamir_reconstruct(&self, values: &[Fp<L>], position: Fp<L>, degree: usize) -> Result<Fp<L>> {
        if values.len() < degree + 1 {
            return Err(Error::TooFewShares { needed: degree + 1, got: values.len() });
        }
        let table = self.shamir_table(position, degree)?;
        let basis = &values[..=degree];
        // the rows for parties degree+1..=n are also a consistency check
        let secret = apply_row(&table.recon_row, basis);
        if values.len() > degree + 1 {
            let mut full = vec![secret];
            full.extend_from_slice(&basis[..degree]);
            for (row, &v) in table.share_rows.iter().zip(&values[degree..]).skip(1) {
                if apply_row(row, &full) != v {
                    return Err(Error::InconsistentDegree(degree));
                }
            }
        }
        Ok(secret)
    }
}
