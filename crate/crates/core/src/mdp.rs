//! Tabular MDPs, stochastic policies and the exact oracles everything else is
//! checked against: dense successor measures, soft and hard value iteration,
//! maximum-entropy returns.
//!
//! Successor measures use the `(1 - γ)` normalisation, so every row of the
//! state-action matrix is a probability distribution over future pairs and
//! the visit at `t = 0` is counted.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{l1_distance, Matrix};
use crate::scalar::{argmax, entropy, log_sum_exp, softmax_into, Scalar};

/// Largest `|S||A|` for which the dense state-action successor matrix is built.
pub const MAX_DENSE_PAIRS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp<T> {
    n_states: usize,
    n_actions: usize,
    transition: Vec<T>,
    initial_dist: Vec<T>,
    discount: T,
}

/// Plain-text (JSON) form of an MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    pub discount: f64,
}

fn check_simplex<T: Scalar>(p: &[T], what: impl Fn() -> String) -> Result<()> {
    let tol = T::simplex_tol();
    let total: T = p.iter().copied().sum();
    contract(
        p.iter().all(|&x| x.is_finite() && x >= T::zero()) && (total - T::one()).abs() <= tol,
        || format!("{} is not a probability vector (sum {})", what(), total),
    )
}

impl<T: Scalar> TabularMdp<T> {
    /// `transition` is flat, indexed `[s][a][s']`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<T>,
        initial_dist: Vec<T>,
        discount: T,
    ) -> Result<Self> {
        contract(n_states > 0 && n_actions > 0, || {
            "state and action counts must be positive".into()
        })?;
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if initial_dist.len() != n_states {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries for {n_states} states",
                initial_dist.len()
            )));
        }
        contract(discount > T::zero() && discount < T::one(), || {
            format!("discount {discount} outside (0, 1)")
        })?;
        for s in 0..n_states {
            for a in 0..n_actions {
                let start = (s * n_actions + a) * n_states;
                check_simplex(&transition[start..start + n_states], || {
                    format!("P[{s}][{a}]")
                })?;
            }
        }
        check_simplex(&initial_dist, || "initial distribution".into())?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            initial_dist,
            discount,
        })
    }

    pub fn from_nested(
        transition: &[Vec<Vec<T>>],
        initial_dist: Vec<T>,
        discount: T,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::Dimension(format!("state {s} has a ragged action list")));
            }
            for row in per_action {
                if row.len() != n_states {
                    return Err(Error::Dimension(format!("state {s} has a ragged next-state row")));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::new(n_states, n_actions, flat, initial_dist, discount)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn initial_dist(&self) -> &[T] {
        &self.initial_dist
    }

    /// Flat index of the pair `(s, a)`.
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// `P(· | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[T] {
        let start = self.pair(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Same MDP with a different discount.
    pub fn with_discount(&self, discount: T) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.initial_dist.clone(),
            discount,
        )
    }

    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            n_states: self.n_states,
            n_actions: self.n_actions,
            transition: (0..self.n_states)
                .map(|s| {
                    (0..self.n_actions)
                        .map(|a| self.next_dist(s, a).iter().map(|x| x.as_f64()).collect())
                        .collect()
                })
                .collect(),
            initial_dist: self.initial_dist.iter().map(|x| x.as_f64()).collect(),
            discount: self.discount.as_f64(),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        contract(
            doc.transition.len() == doc.n_states
                && doc.transition.iter().all(|r| r.len() == doc.n_actions),
            || "document dimensions disagree with n_states / n_actions".into(),
        )?;
        let nested: Vec<Vec<Vec<T>>> = doc
            .transition
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|r| r.iter().map(|&x| T::lit(x)).collect())
                    .collect()
            })
            .collect();
        Self::from_nested(
            &nested,
            doc.initial_dist.iter().map(|&x| T::lit(x)).collect(),
            T::lit(doc.discount),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

/// A Markov policy `π(a | s)`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPolicy<T> {
    n_states: usize,
    n_actions: usize,
    probs: Vec<T>,
}

impl<T: Scalar> StochasticPolicy<T> {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "{} probabilities for {n_states} states x {n_actions} actions",
                probs.len()
            )));
        }
        for s in 0..n_states {
            check_simplex(&probs[s * n_actions..(s + 1) * n_actions], || {
                format!("policy row {s}")
            })?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        contract(rows.iter().all(|r| r.len() == n_actions), || "ragged policy rows".into())?;
        Self::new(rows.len(), n_actions, rows.concat())
    }

    /// Rows are normalised in place; used internally where rows are already
    /// distributions up to rounding.
    pub(crate) fn from_normalized(n_states: usize, n_actions: usize, probs: Vec<T>) -> Self {
        debug_assert_eq!(probs.len(), n_states * n_actions);
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = T::one() / T::lit(n_actions as f64);
        Self::from_normalized(n_states, n_actions, vec![p; n_states * n_actions])
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        contract(actions.iter().all(|&a| a < n_actions), || {
            "deterministic action out of range".into()
        })?;
        let mut probs = vec![T::zero(); actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = T::one();
        }
        Ok(Self::from_normalized(actions.len(), n_actions, probs))
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> T {
        self.probs[s * self.n_actions + a]
    }

    pub fn entropy(&self, s: usize) -> T {
        entropy(self.row(s))
    }

    pub fn entropies(&self) -> Vec<T> {
        (0..self.n_states).map(|s| self.entropy(s)).collect()
    }

    pub fn mean_entropy(&self) -> T {
        self.entropies().into_iter().sum::<T>() / T::lit(self.n_states as f64)
    }

    /// Largest per-state total-variation distance to `other`.
    pub fn max_tv(&self, other: &Self) -> T {
        (0..self.n_states)
            .map(|s| l1_distance(self.row(s), other.row(s)) * T::lit(0.5))
            .fold(T::zero(), T::max)
    }

    fn check_against(&self, mdp: &TabularMdp<T>) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    State,
    StateAction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardVector<T> {
    pub values: Vec<T>,
    pub support: Support,
}

impl<T: Scalar> RewardVector<T> {
    pub fn state(values: Vec<T>) -> Self {
        Self {
            values,
            support: Support::State,
        }
    }

    pub fn state_action(values: Vec<T>) -> Self {
        Self {
            values,
            support: Support::StateAction,
        }
    }

    /// Reward over `(s, a)` pairs; state rewards are broadcast across actions.
    pub fn per_pair(&self, n_states: usize, n_actions: usize) -> Result<Vec<T>> {
        contract(self.values.iter().all(|v| v.is_finite()), || {
            "reward has non-finite entries".into()
        })?;
        match self.support {
            Support::StateAction if self.values.len() == n_states * n_actions => {
                Ok(self.values.clone())
            }
            Support::State if self.values.len() == n_states => Ok(self
                .values
                .iter()
                .flat_map(|&r| std::iter::repeat(r).take(n_actions))
                .collect()),
            _ => Err(Error::Dimension(format!(
                "{:?} reward of length {} for {n_states} states x {n_actions} actions",
                self.support,
                self.values.len()
            ))),
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * k).collect(),
            support: self.support,
        }
    }
}

/// Marginalised occupancies `𝕄` over pairs and `𝕄_S` over states.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals<T> {
    pub state_action: Vec<T>,
    pub state: Vec<T>,
}

impl<T: Scalar> Marginals<T> {
    pub fn from_state_action(state_action: Vec<T>, n_actions: usize) -> Self {
        let state = state_action
            .chunks(n_actions)
            .map(|c| c.iter().copied().sum())
            .collect();
        Self {
            state_action,
            state,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuccessorMeasure<T> {
    pub sa_matrix: Matrix<T>,
    pub marginal: Vec<T>,
    pub state_marginal: Vec<T>,
}

impl<T: Scalar> SuccessorMeasure<T> {
    pub fn marginals(&self) -> Marginals<T> {
        Marginals {
            state_action: self.marginal.clone(),
            state: self.state_marginal.clone(),
        }
    }
}

/// State-action chain `P^π[(s,a), (s',a')] = P(s'|s,a) π(a'|s')`.
pub fn pair_transition<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
) -> Result<Matrix<T>> {
    policy.check_against(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut p = Matrix::zeros(ns * na, ns * na);
    for s in 0..ns {
        for a in 0..na {
            let row = p.row_mut(s * na + a);
            for (s2, &prob) in mdp.next_dist(s, a).iter().enumerate() {
                if prob == T::zero() {
                    continue;
                }
                for a2 in 0..na {
                    row[s2 * na + a2] = prob * policy.prob(s2, a2);
                }
            }
        }
    }
    Ok(p)
}

/// State chain `P_π[s, s'] = Σ_a π(a|s) P(s'|s,a)`.
pub fn state_transition<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
) -> Result<Matrix<T>> {
    policy.check_against(mdp)?;
    let ns = mdp.n_states;
    let mut p = Matrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..mdp.n_actions {
            let w = policy.prob(s, a);
            if w == T::zero() {
                continue;
            }
            let row = p.row_mut(s);
            for (o, &prob) in row.iter_mut().zip(mdp.next_dist(s, a)) {
                *o = *o + w * prob;
            }
        }
    }
    Ok(p)
}

/// Initial pair distribution `μ0(s) π(a|s)`.
pub fn initial_pair_dist<T: Scalar>(mdp: &TabularMdp<T>, policy: &StochasticPolicy<T>) -> Vec<T> {
    (0..mdp.n_states)
        .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
        .map(|(s, a)| mdp.initial_dist[s] * policy.prob(s, a))
        .collect()
}

/// Dense successor measure `M = (1 - γ)(I - γ P^π)^{-1}` on the state-action
/// chain, with its marginals.
pub fn successor_measure<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
) -> Result<SuccessorMeasure<T>> {
    let n = mdp.n_pairs();
    contract(n <= MAX_DENSE_PAIRS, || {
        format!("{n} state-action pairs exceeds the dense limit of {MAX_DENSE_PAIRS}")
    })?;
    let gamma = mdp.discount;
    let mut a = pair_transition(mdp, policy)?;
    a.scale(-gamma);
    for i in 0..n {
        a[(i, i)] = a[(i, i)] + T::one();
    }
    let mut m = a.inverse()?;
    m.scale(T::one() - gamma);
    let marginal = m.vec_mul(&initial_pair_dist(mdp, policy))?;
    let marginals = Marginals::from_state_action(marginal, mdp.n_actions);
    Ok(SuccessorMeasure {
        sa_matrix: m,
        marginal: marginals.state_action,
        state_marginal: marginals.state,
    })
}

/// Marginalised occupancies via the state chain:
/// `𝕄_S = (1 - γ) μ0ᵀ (I - γ P_π)^{-1}`, `𝕄(s,a) = 𝕄_S(s) π(a|s)`.
/// Cheap enough for environments too large for [`successor_measure`].
pub fn marginals<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
) -> Result<Marginals<T>> {
    let gamma = mdp.discount;
    let ns = mdp.n_states;
    let p = state_transition(mdp, policy)?;
    let mut a = Matrix::zeros(ns, ns);
    for i in 0..ns {
        for j in 0..ns {
            let id = if i == j { T::one() } else { T::zero() };
            // transposed system: (I - γ P_π)ᵀ x = (1 - γ) μ0
            a[(i, j)] = id - gamma * p[(j, i)];
        }
    }
    let rhs: Vec<T> = mdp
        .initial_dist
        .iter()
        .map(|&m| (T::one() - gamma) * m)
        .collect();
    let state = a.solve_vec(&rhs)?;
    let state_action = (0..ns)
        .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
        .map(|(s, a)| state[s] * policy.prob(s, a))
        .collect();
    Ok(Marginals {
        state_action,
        state,
    })
}

/// Per-pair state successor measure `M_S(s, a, ·)`, an `|S||A| x |S|` matrix:
/// `(1 - γ) δ_s + γ P(·|s,a) D` with `D = (1 - γ)(I - γ P_π)^{-1}`.
pub fn state_successor_measure<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
) -> Result<Matrix<T>> {
    let gamma = mdp.discount;
    let ns = mdp.n_states;
    let mut a = state_transition(mdp, policy)?;
    a.scale(-gamma);
    for i in 0..ns {
        a[(i, i)] = a[(i, i)] + T::one();
    }
    let mut d = a.inverse()?;
    d.scale(T::one() - gamma);
    let mut out = Matrix::zeros(mdp.n_pairs(), ns);
    for s in 0..ns {
        for act in 0..mdp.n_actions {
            let next = d.vec_mul(mdp.next_dist(s, act))?;
            let row = out.row_mut(mdp.pair(s, act));
            for (o, n) in row.iter_mut().zip(next) {
                *o = gamma * n;
            }
            row[s] = row[s] + (T::one() - gamma);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            max_iter: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValueSolution<T> {
    /// Q over pairs, indexed by [`TabularMdp::pair`].
    pub q: Vec<T>,
    pub policy: StochasticPolicy<T>,
    pub iterations: usize,
    pub residual: T,
}

fn value_iteration<T: Scalar>(
    mdp: &TabularMdp<T>,
    reward: &RewardVector<T>,
    opts: &SolverOptions<T>,
    backup: impl Fn(&[T]) -> T,
    what: &'static str,
) -> Result<(Vec<T>, usize, T)> {
    contract(opts.tol > T::zero(), || "tolerance must be positive".into())?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let r = reward.per_pair(ns, na)?;
    let gamma = mdp.discount;
    let mut q = vec![T::zero(); ns * na];
    let mut v = vec![T::zero(); ns];
    let mut residual = T::infinity();
    for it in 1..=opts.max_iter {
        for s in 0..ns {
            v[s] = backup(&q[s * na..(s + 1) * na]);
        }
        residual = T::zero();
        for s in 0..ns {
            for a in 0..na {
                let i = s * na + a;
                let next: T = mdp
                    .next_dist(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(&p, &vv)| p * vv)
                    .sum();
                let updated = r[i] + gamma * next;
                residual = residual.max((updated - q[i]).abs());
                q[i] = updated;
            }
        }
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok((q, it, residual));
        }
    }
    Err(Error::NonConvergence {
        what,
        iterations: opts.max_iter,
        residual: residual.as_f64(),
    })
}

/// Soft Bellman optimality iteration
/// `Q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) log Σ_{a'} exp Q(s',a')`;
/// the returned policy is `softmax(Q(s, ·))`, the unique maximum-entropy
/// optimal policy.
pub fn soft_value_iteration<T: Scalar>(
    mdp: &TabularMdp<T>,
    reward: &RewardVector<T>,
    opts: &SolverOptions<T>,
) -> Result<ValueSolution<T>> {
    let (q, iterations, residual) =
        value_iteration(mdp, reward, opts, log_sum_exp, "soft value iteration")?;
    let na = mdp.n_actions;
    let mut probs = vec![T::zero(); q.len()];
    for (row_q, row_p) in q.chunks(na).zip(probs.chunks_mut(na)) {
        softmax_into(row_q, row_p);
    }
    Ok(ValueSolution {
        policy: StochasticPolicy::from_normalized(mdp.n_states, na, probs),
        q,
        iterations,
        residual,
    })
}

/// Greedy action with lowest-index tie-break; values within a few ulps of
/// the maximum count as ties.
pub fn greedy_action<T: Scalar>(q_row: &[T]) -> usize {
    let best = q_row[argmax(q_row)];
    let tol = T::epsilon() * T::lit(64.0) * (T::one() + best.abs());
    q_row
        .iter()
        .position(|&q| q >= best - tol)
        .unwrap_or(0)
}

/// Standard Bellman optimality iteration with a deterministic greedy policy.
pub fn hard_value_iteration<T: Scalar>(
    mdp: &TabularMdp<T>,
    reward: &RewardVector<T>,
    opts: &SolverOptions<T>,
) -> Result<ValueSolution<T>> {
    let (q, iterations, residual) = value_iteration(
        mdp,
        reward,
        opts,
        |row| row.iter().copied().fold(T::neg_infinity(), T::max),
        "hard value iteration",
    )?;
    let actions: Vec<usize> = q.chunks(mdp.n_actions).map(greedy_action).collect();
    Ok(ValueSolution {
        policy: StochasticPolicy::deterministic(mdp.n_actions, &actions)?,
        q,
        iterations,
        residual,
    })
}

/// `J_H^π = ⟨𝕄^π, R + H^π⟩` with `H^π(s,a)` the entropy of `π(·|s)`.
pub fn maxent_return<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
    reward: &RewardVector<T>,
) -> Result<T> {
    let r = reward.per_pair(mdp.n_states, mdp.n_actions)?;
    let m = marginals(mdp, policy)?;
    let h = policy.entropies();
    Ok(m
        .state_action
        .iter()
        .enumerate()
        .map(|(i, &w)| w * (r[i] + h[i / mdp.n_actions]))
        .sum())
}

/// `⟨𝕄^π, R⟩`.
pub fn linear_return<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
    reward: &RewardVector<T>,
) -> Result<T> {
    let r = reward.per_pair(mdp.n_states, mdp.n_actions)?;
    let m = marginals(mdp, policy)?;
    Ok(m.state_action.iter().zip(&r).map(|(&w, &x)| w * x).sum())
}

/// `π_α = (1 - α) π + α · uniform`.
pub fn interpolate_policy<T: Scalar>(
    optimal: &StochasticPolicy<T>,
    alpha: T,
) -> Result<StochasticPolicy<T>> {
    contract(alpha >= T::zero() && alpha <= T::one(), || {
        format!("alpha {alpha} outside [0, 1]")
    })?;
    let u = T::one() / T::lit(optimal.n_actions as f64);
    let probs = optimal
        .probs
        .iter()
        .map(|&p| (T::one() - alpha) * p + alpha * u)
        .collect();
    Ok(StochasticPolicy::from_normalized(
        optimal.n_states,
        optimal.n_actions,
        probs,
    ))
}
