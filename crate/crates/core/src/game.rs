//! The deposit game between a worker and the coordinator/monitor coalition.
//!
//! The worker picks how many of a stage's `n` computations to fake (`m`), the
//! coalition how many to test (`p`). Detection is modelled two ways:
//! [`detection_prob_paper`] is the per-fake independent model the deposit
//! bound is proved under, [`detection_prob_exact`] is the hypergeometric
//! probability of the protocol's without-replacement sampling. The exact form
//! dominates the model one, so the deposit bound carries over.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::derived_rng;

/// `c_c(x)`: cost of honestly executing `x` of the `n` computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostCurve {
    /// `c * x / n`
    Linear { total: f64 },
    /// Explicit `c_c(0..=n)`; must start at 0 and never decrease.
    Table { values: Vec<f64> },
}

impl CostCurve {
    pub fn at(&self, x: u64, n: u64) -> f64 {
        match self {
            CostCurve::Linear { total } => total * x as f64 / n as f64,
            CostCurve::Table { values } => values[x as usize],
        }
    }

    pub fn total(&self, n: u64) -> f64 {
        self.at(n, n)
    }

    fn validate(&self, n: u64) -> Result<()> {
        match self {
            CostCurve::Linear { total } if *total >= 0.0 => Ok(()),
            CostCurve::Linear { .. } => Err(Error::Domain("negative cost".into())),
            CostCurve::Table { values } => {
                if values.len() as u64 != n + 1 || values[0] != 0.0 {
                    return Err(Error::Domain("cost table must hold c(0)=0..c(n)".into()));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Domain("cost table must be non-decreasing".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub n: u64,
    pub p: u64,
    pub m: u64,
    pub benefit: f64,
    pub coalition_benefit: f64,
    pub deposit: f64,
    pub penalty: f64,
    pub compute_cost: CostCurve,
    /// `c_t(x) = test_cost_per_probe * x`
    pub test_cost_per_probe: f64,
}

impl GameParams {
    /// Linear costs with total honest cost `c`, deposit left at zero.
    pub fn linear(n: u64, p: u64, c: f64, benefit: f64) -> Self {
        GameParams {
            n,
            p,
            m: 0,
            benefit,
            coalition_benefit: 0.0,
            deposit: 0.0,
            penalty: 0.0,
            compute_cost: CostCurve::Linear { total: c },
            test_cost_per_probe: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m > self.n || self.p > self.n {
            return Err(Error::Domain(format!(
                "need 0 <= m,p <= n with n >= 1 (n={}, p={}, m={})",
                self.n, self.p, self.m
            )));
        }
        if self.deposit < 0.0 {
            return Err(Error::Domain("deposit must be non-negative".into()));
        }
        self.compute_cost.validate(self.n)
    }

    pub fn honest_cost(&self) -> f64 {
        self.compute_cost.total(self.n)
    }

    /// Cost saved by faking `m` computations: `c_c(n) - (c_c(n) - c_c(m))` spent.
    fn cost_spent(&self, m: u64) -> f64 {
        self.compute_cost.total(self.n) - self.compute_cost.at(m, self.n)
    }

    fn test_cost(&self) -> f64 {
        self.test_cost_per_probe * self.p as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityOutcome {
    pub u_uw: f64,
    pub u_cstlm: f64,
    pub detected: bool,
}

fn check_domain(n: u64, p: u64, m: u64) -> Result<()> {
    if n == 0 || p > n || m > n {
        return Err(Error::Domain(format!(
            "need 0 <= p,m <= n, n >= 1 (n={n}, p={p}, m={m})"
        )));
    }
    Ok(())
}

/// `1 - (1 - p/n)^m`
pub fn detection_prob_paper(n: u64, p: u64, m: u64) -> Result<f64> {
    check_domain(n, p, m)?;
    let miss = 1.0 - p as f64 / n as f64;
    Ok(1.0 - miss.powi(m as i32))
}

/// `1 - C(n-m, p) / C(n, p)`, evaluated as the product
/// `Π_{k<p} (n-m-k)/(n-k)`, every factor of which lies in `[0, 1]`.
pub fn detection_prob_exact(n: u64, p: u64, m: u64) -> Result<f64> {
    check_domain(n, p, m)?;
    if p > n - m {
        return Ok(1.0);
    }
    let mut miss = 1.0;
    for k in 0..p {
        miss *= (n - m - k) as f64 / (n - k) as f64;
    }
    Ok(1.0 - miss)
}

/// Exact rational form of [`detection_prob_exact`].
pub fn detection_prob_exact_rational(n: u64, p: u64, m: u64) -> Result<BigRational> {
    check_domain(n, p, m)?;
    if p > n - m {
        return Ok(BigRational::one());
    }
    let mut miss = BigRational::one();
    for k in 0..p {
        miss *= BigRational::new(BigInt::from(n - m - k), BigInt::from(n - k));
    }
    Ok(BigRational::one() - miss)
}

/// Smallest deposit that makes honesty a best response with `p` probes:
/// `c / (1 - e^{-(p-1)})`.
pub fn min_deposit(c: f64, p: u64) -> Result<f64> {
    if p < 2 {
        return Err(Error::Domain(format!(
            "deposit bound needs at least 2 probes, got {p}"
        )));
    }
    if c < 0.0 {
        return Err(Error::Domain("cost must be non-negative".into()));
    }
    Ok(c / (1.0 - (-((p - 1) as f64)).exp()))
}

pub fn utilities(params: &GameParams, detected: bool) -> UtilityOutcome {
    let spent = params.cost_spent(params.m);
    let u_uw = if detected {
        -params.deposit - spent
    } else {
        params.benefit - spent
    };
    let u_cstlm = if params.m == 0 {
        params.coalition_benefit - params.test_cost()
    } else if detected {
        -params.test_cost() + params.deposit
    } else {
        -params.penalty - params.test_cost()
    };
    UtilityOutcome {
        u_uw,
        u_cstlm,
        detected,
    }
}

/// Expected worker utility when faking `m` computations and being caught with
/// probability `q`.
pub fn expected_uw_utility(params: &GameParams, m: u64, q: f64) -> f64 {
    let spent = params.cost_spent(m);
    q * (-params.deposit - spent) + (1.0 - q) * (params.benefit - spent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestyReport {
    /// `p >= 2`
    pub hypothesis_holds: bool,
    pub deposit_sufficient: bool,
    /// No `m >= 1` beats honesty under the per-fake detection model.
    pub best_response_paper: bool,
    /// Same check with hypergeometric detection.
    pub best_response_exact: bool,
    /// Most profitable deviation under the per-fake model, if any beats honesty.
    pub worst_m: Option<u64>,
    pub enforced: bool,
}

pub fn honesty_report(params: &GameParams) -> Result<HonestyReport> {
    params.validate()?;
    let n = params.n;
    let c = params.honest_cost();
    let hypothesis_holds = params.p >= 2;
    let deposit_sufficient = match min_deposit(c, params.p) {
        Ok(bound) => params.deposit >= bound,
        Err(_) => false,
    };
    let honest = expected_uw_utility(params, 0, 0.0);
    let mut best_response_paper = true;
    let mut best_response_exact = true;
    let mut worst: Option<(u64, f64)> = None;
    for m in 1..=n {
        let gain_paper =
            expected_uw_utility(params, m, detection_prob_paper(n, params.p, m)?) - honest;
        let gain_exact =
            expected_uw_utility(params, m, detection_prob_exact(n, params.p, m)?) - honest;
        if gain_paper > 0.0 {
            best_response_paper = false;
            if worst.is_none_or(|(_, g)| gain_paper > g) {
                worst = Some((m, gain_paper));
            }
        }
        if gain_exact > 0.0 {
            best_response_exact = false;
        }
    }
    Ok(HonestyReport {
        hypothesis_holds,
        deposit_sufficient,
        best_response_paper,
        best_response_exact,
        worst_m: worst.map(|(m, _)| m),
        enforced: hypothesis_holds && deposit_sufficient && best_response_paper,
    })
}

/// Whether the parameters meet the deposit theorem's conditions and no
/// deviation `m >= 1` has higher expected utility than honesty.
pub fn honesty_enforced(params: &GameParams) -> bool {
    honesty_report(params).is_ok_and(|r| r.enforced)
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite parameter")
}

/// Best-response check in exact rational arithmetic, for linear costs.
///
/// For every `m` in `1..=n`, confirms
/// `q_m (B + d) >= c m / n` with `q_m = 1 - (1 - p/n)^m`, which is
/// equivalent to `E[u_uw(m)] <= u_uw(0)`. `B`, `d` and `c` are taken as the
/// exact values of the given floats.
pub fn best_response_exact_linear(n: u64, p: u64, c: f64, benefit: f64, deposit: f64) -> Result<bool> {
    check_domain(n, p, 0)?;
    let stake = exact(benefit) + exact(deposit);
    let cost = exact(c);
    // q_m (B + d) >= c m / n, times n^m and both denominators:
    // (n^m - (n-p)^m) * stake_num * cost_den >= m n^{m-1} * cost_num * stake_den
    let lhs_scale = stake.numer() * cost.denom();
    let rhs_scale = cost.numer() * stake.denom();
    let n_big = BigInt::from(n);
    let keep = BigInt::from(n - p);
    let mut n_prev = BigInt::one();
    let mut keep_pow = BigInt::one();
    for m in 1..=n {
        let n_pow = &n_prev * &n_big;
        keep_pow *= &keep;
        let lhs = (&n_pow - &keep_pow) * &lhs_scale;
        let rhs = &n_prev * BigInt::from(m) * &rhs_scale;
        if lhs < rhs {
            return Ok(false);
        }
        n_prev = n_pow;
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub m: u64,
    pub case: u8,
    pub detection: f64,
    pub bound: f64,
}

/// Checks both inequalities of the deposit theorem's proof over every `m`.
///
/// Case I (`1 <= m <= floor((1-1/p) n)`): `1-(1-p/n)^m > m/n`.
/// Case II (`m > floor((1-1/p) n)`): `1-(1-p/n)^m > 1-e^{-(p-1)}`.
pub fn theorem_bounds_violations(n: u64, p: u64) -> Result<Vec<BoundViolation>> {
    if p < 2 || n < p {
        return Err(Error::Domain(format!("need 2 <= p <= n (n={n}, p={p})")));
    }
    let split = n - n.div_ceil(p); // floor((1 - 1/p) n)
    let tail_bound = 1.0 - (-((p - 1) as f64)).exp();
    let mut out = Vec::new();
    for m in 1..=n {
        let q = detection_prob_paper(n, p, m)?;
        let (case, bound) = if m <= split {
            (1, m as f64 / n as f64)
        } else {
            (2, tail_bound)
        };
        if q <= bound {
            out.push(BoundViolation {
                m,
                case,
                detection: q,
                bound,
            });
        }
    }
    Ok(out)
}

pub fn theorem_bounds_check(n: u64, p: u64) -> Result<bool> {
    Ok(theorem_bounds_violations(n, p)?.is_empty())
}

/// Fraction of `trials` in which `p` distinct uniform probes hit at least one
/// of `m` faked computations. Trial `t` draws from stream `t` of `seed`.
pub fn simulate_detection(n: u64, p: u64, m: u64, trials: u64, seed: u64) -> Result<f64> {
    check_domain(n, p, m)?;
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    if m == 0 || p == 0 {
        return Ok(0.0);
    }
    // probes are uniform, so which m are faked does not matter: take 0..m
    let hits = par::count_range(trials, |t| {
        let mut rng = derived_rng(seed, t);
        sample(&mut rng, n as usize, p as usize)
            .iter()
            .any(|k| (k as u64) < m)
    });
    Ok(hits as f64 / trials as f64)
}

/// Three binomial standard errors of a rate `q` estimated from `trials`.
pub fn three_sigma(q: f64, trials: u64) -> f64 {
    3.0 * (q * (1.0 - q) / trials as f64).sqrt()
}
