//! Sparse additive corruptions of the right-hand side `B`.
//!
//! A [`CorruptionPlan`] is an explicit list of `(i, j, h, value)` entries, so
//! the ground truth (the corrupted set `C`, the clean rows `U⋆`, the corrupted
//! columns `V_i^c` of each row) is exact rather than inferred from a dense
//! tensor.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solvers::quantile_rank;
use crate::tensor::{tprod, DenseTensor3, Shape3};

/// Counts such as `m · β̃_row` must be this close to an integer.
const INTEGER_TOL: f64 = 1e-9;

/// Distribution of corruption values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MagnitudeLaw {
    /// Signed draws from `N(mean, std²)`.
    Normal { mean: f64, std: f64 },
    /// `|N(mean, std²)|`.
    AbsNormal { mean: f64, std: f64 },
}

impl MagnitudeLaw {
    pub fn validate(&self) -> Result<()> {
        let (MagnitudeLaw::Normal { mean, std } | MagnitudeLaw::AbsNormal { mean, std }) = *self;
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::config(format!(
                "magnitude law {self} needs a finite mean and a positive standard deviation"
            )));
        }
        Ok(())
    }

    fn normal(&self) -> Result<Normal<f64>> {
        self.validate()?;
        let (MagnitudeLaw::Normal { mean, std } | MagnitudeLaw::AbsNormal { mean, std }) = *self;
        Normal::new(mean, std).map_err(|e| Error::config(e.to_string()))
    }

    fn draw<R: Rng + ?Sized>(&self, dist: &Normal<f64>, rng: &mut R) -> f64 {
        let v = dist.sample(rng);
        match self {
            MagnitudeLaw::Normal { .. } => v,
            MagnitudeLaw::AbsNormal { .. } => v.abs(),
        }
    }
}

impl fmt::Display for MagnitudeLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MagnitudeLaw::Normal { mean, std } => write!(f, "normal({mean},{std})"),
            MagnitudeLaw::AbsNormal { mean, std } => write!(f, "abs_normal({mean},{std})"),
        }
    }
}

/// Parses `normal(100,20)` or `abs_normal(3,2)`.
impl FromStr for MagnitudeLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse magnitude law '{s}'"));
        let s = s.trim();
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let (a, b) = args.split_once(',').ok_or_else(bad)?;
        let mean: f64 = a.trim().parse().map_err(|_| bad())?;
        let std: f64 = b.trim().parse().map_err(|_| bad())?;
        let law = match name.trim() {
            "normal" => MagnitudeLaw::Normal { mean, std },
            "abs_normal" => MagnitudeLaw::AbsNormal { mean, std },
            _ => return Err(bad()),
        };
        law.validate()?;
        Ok(law)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionEntry {
    pub i: usize,
    pub j: usize,
    pub h: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanShape {
    pub m: usize,
    pub p: usize,
    pub n: usize,
}

impl From<PlanShape> for Shape3 {
    fn from(s: PlanShape) -> Self {
        Shape3::new(s.m, s.p, s.n)
    }
}

impl From<Shape3> for PlanShape {
    fn from(s: Shape3) -> Self {
        PlanShape {
            m: s.rows,
            p: s.cols,
            n: s.depth,
        }
    }
}

/// An immutable set of corrupted positions of an `m × p × n` right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPlan {
    shape: PlanShape,
    seed: Option<u64>,
    law: Option<MagnitudeLaw>,
    entries: Vec<CorruptionEntry>,
}

impl CorruptionPlan {
    pub fn empty(shape: Shape3) -> Self {
        Self {
            shape: shape.into(),
            seed: None,
            law: None,
            entries: Vec::new(),
        }
    }

    /// Builds a plan from explicit entries. Indices must be in bounds, values
    /// finite and positions distinct. Entries are stored in `(i, j, h)` order.
    pub fn from_entries(shape: Shape3, mut entries: Vec<CorruptionEntry>) -> Result<Self> {
        for e in &entries {
            if e.i >= shape.rows || e.j >= shape.cols || e.h >= shape.depth {
                return Err(Error::shape(format!(
                    "corruption at ({}, {}, {}) outside {shape}",
                    e.i, e.j, e.h
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::domain(format!(
                    "corruption at ({}, {}, {}) is not finite",
                    e.i, e.j, e.h
                )));
            }
        }
        entries.sort_by_key(|e| (e.i, e.j, e.h));
        if let Some(w) = entries.windows(2).find(|w| (w[0].i, w[0].j, w[0].h) == (w[1].i, w[1].j, w[1].h)) {
            return Err(Error::domain(format!(
                "duplicate corruption at ({}, {}, {})",
                w[0].i, w[0].j, w[0].h
            )));
        }
        Ok(Self {
            shape: shape.into(),
            seed: None,
            law: None,
            entries,
        })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape.into()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn law(&self) -> Option<MagnitudeLaw> {
        self.law
    }

    pub fn entries(&self) -> &[CorruptionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The corrupted index set `C`.
    pub fn corrupted_set(&self) -> BTreeSet<(usize, usize, usize)> {
        self.entries.iter().map(|e| (e.i, e.j, e.h)).collect()
    }

    fn corrupted_row_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.shape.m];
        for e in &self.entries {
            flags[e.i] = true;
        }
        flags
    }

    /// `U⋆`: rows holding no corruption, ascending.
    pub fn clean_rows(&self) -> Vec<usize> {
        let flags = self.corrupted_row_flags();
        (0..self.shape.m).filter(|&i| !flags[i]).collect()
    }

    pub fn corrupted_rows(&self) -> Vec<usize> {
        let flags = self.corrupted_row_flags();
        (0..self.shape.m).filter(|&i| flags[i]).collect()
    }

    /// `V_i^c`: columns with a corruption somewhere in row `i`, ascending.
    pub fn corrupted_columns(&self, i: usize) -> Vec<usize> {
        let cols: BTreeSet<usize> = self.entries.iter().filter(|e| e.i == i).map(|e| e.j).collect();
        cols.into_iter().collect()
    }

    /// `β = |C| / (mpn)`.
    pub fn beta(&self) -> f64 {
        let total = Shape3::from(self.shape).len();
        if total == 0 {
            0.0
        } else {
            self.entries.len() as f64 / total as f64
        }
    }

    /// `β_row = (m − |U⋆|) / m`.
    pub fn beta_row(&self) -> f64 {
        if self.shape.m == 0 {
            0.0
        } else {
            self.corrupted_rows().len() as f64 / self.shape.m as f64
        }
    }

    /// The corruption as a dense tensor `B_corr`.
    pub fn to_dense(&self) -> DenseTensor3 {
        let s = self.shape();
        let mut d = DenseTensor3::zeros(s.rows, s.cols, s.depth);
        for e in &self.entries {
            d.set(e.i, e.j, e.h, e.value);
        }
        d
    }

    /// `B⋆ + B_corr`; entries outside the plan are copied bitwise.
    pub fn apply(&self, b_star: &DenseTensor3) -> Result<DenseTensor3> {
        if b_star.shape() != self.shape() {
            return Err(Error::shape(format!(
                "plan shape {} does not match B {}",
                self.shape(),
                b_star.shape()
            )));
        }
        let mut b = b_star.clone();
        for e in &self.entries {
            b.set(e.i, e.j, e.h, b.get(e.i, e.j, e.h) + e.value);
        }
        Ok(b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: CorruptionPlan =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("corruption plan JSON: {e}")))?;
        let mut plan = CorruptionPlan::from_entries(raw.shape(), raw.entries)?;
        plan.seed = raw.seed;
        plan.law = raw.law;
        Ok(plan)
    }

    /// First 16 hex digits of the SHA-256 of the plan's JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Returns `x` as an integer when it is one (within rounding), naming `what`
/// in the error otherwise.
fn exact_count(x: f64, what: &str) -> Result<usize> {
    let r = x.round();
    if !x.is_finite() || x < 0.0 || (x - r).abs() > INTEGER_TOL {
        return Err(Error::config(format!("{what} = {x} is not a non-negative integer")));
    }
    Ok(r as usize)
}

/// Draws `m·β̃_row` rows without replacement, then `β̃·mpn` positions with
/// replacement from the `(j, h)` grids of those rows. Repeated positions
/// collapse, so the realized `β ≤ β̃` and `β_row ≤ β̃_row`. One value is drawn
/// per distinct position, in `(i, j, h)` order.
pub fn generate_plan(
    shape: Shape3,
    beta_tilde: f64,
    beta_row_tilde: f64,
    law: MagnitudeLaw,
    seed: u64,
) -> Result<CorruptionPlan> {
    let Shape3 {
        rows: m,
        cols: p,
        depth: n,
    } = shape;
    for (name, v) in [("beta_tilde", beta_tilde), ("beta_row_tilde", beta_row_tilde)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::config(format!("{name} = {v} outside [0, 1]")));
        }
    }
    let dist = law.normal()?;
    let n_rows = exact_count(m as f64 * beta_row_tilde, "m * beta_row_tilde")?;
    let n_draws = exact_count(beta_tilde * shape.len() as f64, "beta_tilde * m * p * n")?;
    if n_draws > 0 && n_rows == 0 {
        return Err(Error::config(
            "beta_tilde > 0 requires at least one corruptible row (m * beta_row_tilde >= 1)",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = sample(&mut rng, m, n_rows).into_vec();
    rows.sort_unstable();
    let per_row = p * n;
    let mut positions = BTreeSet::new();
    for _ in 0..n_draws {
        let k = rng.random_range(0..n_rows * per_row);
        positions.insert((rows[k / per_row], (k % per_row) / n, k % n));
    }
    let entries = positions
        .into_iter()
        .map(|(i, j, h)| CorruptionEntry {
            i,
            j,
            h,
            value: law.draw(&dist, &mut rng),
        })
        .collect();
    Ok(CorruptionPlan {
        shape: shape.into(),
        seed: Some(seed),
        law: Some(law),
        entries,
    })
}

/// A system on which masked QTRK makes no progress.
#[derive(Debug, Clone)]
pub struct AdversarialInstance {
    pub b: DenseTensor3,
    pub x0: DenseTensor3,
    pub q: f64,
    pub plan: CorruptionPlan,
    /// The magnitude actually used after any doublings.
    pub magnitude: f64,
}

const MAX_DOUBLINGS: usize = 40;

/// Corrupts entry `(i, 0, 0)` of every row of `B⋆ = A ∗ X⋆` by `+magnitude`
/// and perturbs `X⋆` by `+1` at `(0, 0, 0)`. Every row then has a flagged
/// entry in column 0 at the suggested quantile `q = 1 − β − 1/(2mpn)`, so the
/// masked update never touches column 0. The magnitude is doubled until that
/// flagging holds at `X0`.
pub fn adversarial_mqtrk(
    a: &DenseTensor3,
    x_star: &DenseTensor3,
    magnitude: f64,
) -> Result<AdversarialInstance> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::domain(format!("magnitude {magnitude} must be positive")));
    }
    let b_star = tprod(a, x_star)?;
    let s = b_star.shape();
    let mut x0 = x_star.clone();
    x0.set(0, 0, 0, x0.get(0, 0, 0) + 1.0);
    let shift = tprod(a, &x0)?;
    let total = s.len();
    let beta = s.rows as f64 / total as f64;
    let q = 1.0 - beta - 1.0 / (2.0 * total as f64);
    if !(q > 0.0) || quantile_rank(q, total) == 0 {
        return Err(Error::domain(format!("shape {s} is too small for the construction")));
    }

    let mut mag = magnitude;
    for _ in 0..=MAX_DOUBLINGS {
        let entries = (0..s.rows)
            .map(|i| CorruptionEntry {
                i,
                j: 0,
                h: 0,
                value: mag,
            })
            .collect();
        let plan = CorruptionPlan::from_entries(s, entries)?;
        let b = plan.apply(&b_star)?;
        let e = shift.sub(&b)?;
        let threshold = crate::solvers::q_quantile(&e, q)?;
        if (0..s.rows).all(|i| e.get(i, 0, 0).abs() > threshold) {
            return Ok(AdversarialInstance {
                b,
                x0,
                q,
                plan,
                magnitude: mag,
            });
        }
        mag *= 2.0;
    }
    Err(Error::Numerical(format!(
        "adversarial construction: corruptions not flagged after {MAX_DOUBLINGS} doublings"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    const N100: MagnitudeLaw = MagnitudeLaw::Normal {
        mean: 100.0,
        std: 20.0,
    };

    #[test]
    fn law_parsing() {
        assert_eq!("normal(100,20)".parse::<MagnitudeLaw>().unwrap(), N100);
        assert_eq!(
            " abs_normal( 3 , 2 ) ".parse::<MagnitudeLaw>().unwrap(),
            MagnitudeLaw::AbsNormal { mean: 3.0, std: 2.0 }
        );
        assert!("normal(1,0)".parse::<MagnitudeLaw>().is_err());
        assert!("cauchy(1,2)".parse::<MagnitudeLaw>().is_err());
        assert!("normal(1)".parse::<MagnitudeLaw>().is_err());
        assert_eq!(N100.to_string().parse::<MagnitudeLaw>().unwrap(), N100);
    }

    #[test]
    fn empty_plan() {
        let plan = generate_plan(Shape3::new(25, 4, 10), 0.0, 0.2, N100, 1).unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.clean_rows(), (0..25).collect::<Vec<_>>());
        assert_eq!(plan.beta(), 0.0);
        assert_eq!(plan.beta_row(), 0.0);
    }

    #[test]
    fn default_shape_counts() {
        let shape = Shape3::new(25, 4, 10);
        for seed in 0..50 {
            let plan = generate_plan(shape, 0.025, 0.2, N100, seed).unwrap();
            assert!(plan.len() <= 25 && !plan.is_empty());
            assert!(plan.beta() <= 0.025);
            assert!(plan.beta_row() <= 0.2);
            assert!(plan.corrupted_rows().len() <= 5);
        }
    }

    #[test]
    fn non_integer_counts_are_config_errors() {
        let shape = Shape3::new(25, 4, 10);
        match generate_plan(shape, 0.025, 0.1, N100, 0) {
            Err(Error::Config(msg)) => assert!(msg.contains("m * beta_row_tilde")),
            other => panic!("{other:?}"),
        }
        match generate_plan(shape, 0.0025, 0.2, N100, 0) {
            Err(Error::Config(msg)) => assert!(msg.contains("beta_tilde * m * p * n")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(generate_plan(shape, 0.025, 0.0, N100, 0), Err(Error::Config(_))));
        assert!(matches!(generate_plan(shape, 1.5, 0.2, N100, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ground_truth_sets_agree() {
        let plan = generate_plan(Shape3::new(20, 3, 5), 0.1, 0.4, N100, 3).unwrap();
        let c = plan.corrupted_set();
        let clean = plan.clean_rows();
        for i in 0..20 {
            let in_c = c.iter().any(|&(r, _, _)| r == i);
            assert_eq!(clean.contains(&i), !in_c);
            assert_eq!(plan.corrupted_columns(i).is_empty(), !in_c);
        }
        assert_eq!(c.len(), plan.len());
        assert_eq!(plan.beta(), plan.len() as f64 / 300.0);
        assert_eq!(plan.beta_row(), (20 - clean.len()) as f64 / 20.0);
    }

    #[test]
    fn abs_law_is_nonnegative_and_normal_is_signed() {
        let shape = Shape3::new(10, 10, 10);
        let abs = MagnitudeLaw::AbsNormal { mean: 0.0, std: 1.0 };
        let plan = generate_plan(shape, 0.2, 1.0, abs, 5).unwrap();
        assert!(plan.entries().iter().all(|e| e.value >= 0.0));
        let signed = MagnitudeLaw::Normal { mean: 0.0, std: 1.0 };
        let plan = generate_plan(shape, 0.2, 1.0, signed, 5).unwrap();
        assert!(plan.entries().iter().any(|e| e.value < 0.0));
    }

    #[test]
    fn generation_is_seeded() {
        let shape = Shape3::new(25, 4, 10);
        let a = generate_plan(shape, 0.025, 0.2, N100, 42).unwrap();
        let b = generate_plan(shape, 0.025, 0.2, N100, 42).unwrap();
        let c = generate_plan(shape, 0.025, 0.2, N100, 43).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a, c);
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn apply_cases() {
        let shape = Shape3::new(3, 2, 2);
        let z = DenseTensor3::zeros(3, 2, 2);
        assert_eq!(CorruptionPlan::empty(shape).apply(&z).unwrap(), z);
        let plan = CorruptionPlan::from_entries(
            shape,
            vec![CorruptionEntry { i: 0, j: 0, h: 0, value: 5.0 }],
        )
        .unwrap();
        let b = plan.apply(&z).unwrap();
        assert_eq!(b.get(0, 0, 0), 5.0);
        assert_eq!(b.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(plan.apply(&b).unwrap().get(0, 0, 0), 10.0);
        assert!(plan.apply(&DenseTensor3::zeros(2, 2, 2)).is_err());
    }

    #[test]
    fn apply_matches_dense_materialization() {
        use rand::SeedableRng;
        let shape = Shape3::new(8, 3, 4);
        let plan = generate_plan(shape, 0.5, 0.5, N100, 9).unwrap();
        let b_star = DenseTensor3::random_normal(8, 3, 4, &mut ChaCha8Rng::seed_from_u64(1));
        // Independent materialization from the raw entry list.
        let mut dense = vec![0.0; shape.len()];
        for e in plan.entries() {
            dense[(e.i * 3 + e.j) * 4 + e.h] += e.value;
        }
        let oracle: Vec<f64> = b_star.data().iter().zip(&dense).map(|(a, c)| a + c).collect();
        let b = plan.apply(&b_star).unwrap();
        assert_eq!(b.data(), &oracle[..]);
        let flags = plan.corrupted_set();
        for i in 0..8 {
            for j in 0..3 {
                for h in 0..4 {
                    if !flags.contains(&(i, j, h)) {
                        assert_eq!(b.get(i, j, h).to_bits(), b_star.get(i, j, h).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn explicit_entries_are_validated() {
        let shape = Shape3::new(2, 2, 2);
        let e = |i, j, h| CorruptionEntry { i, j, h, value: 1.0 };
        assert!(CorruptionPlan::from_entries(shape, vec![e(2, 0, 0)]).is_err());
        assert!(CorruptionPlan::from_entries(shape, vec![e(1, 1, 1), e(1, 1, 1)]).is_err());
        let p = CorruptionPlan::from_entries(shape, vec![e(1, 1, 1), e(0, 1, 0)]).unwrap();
        assert_eq!(p.entries()[0], e(0, 1, 0));
    }

    #[test]
    fn json_round_trip() {
        let plan = generate_plan(Shape3::new(25, 4, 10), 0.025, 0.2, N100, 7).unwrap();
        let json = plan.to_json();
        assert!(json.contains("\"shape\"") && json.contains("\"seed\":7") && json.contains("\"entries\""));
        let back = CorruptionPlan::from_json(&json).unwrap();
        assert_eq!(back, plan);
        assert!(CorruptionPlan::from_json("{").is_err());
    }

    #[test]
    fn adversarial_instance_structure() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DenseTensor3::random_normal(25, 5, 10, &mut rng);
        let xs = DenseTensor3::random_normal(5, 4, 10, &mut rng);
        let inst = adversarial_mqtrk(&a, &xs, 1.0).unwrap();
        assert_eq!(inst.plan.len(), 25);
        assert_eq!(inst.plan.beta(), 0.025);
        assert_eq!(inst.plan.beta_row(), 1.0);
        assert!(inst.plan.entries().iter().all(|e| e.j == 0));
        let d = inst.x0.sub(&xs).unwrap();
        assert_eq!(d.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(d.get(0, 0, 0), 1.0);
        assert!((inst.q - (1.0 - 0.025 - 1.0 / 2000.0)).abs() < 1e-15);
        assert!(inst.magnitude >= 1.0);
    }
}
