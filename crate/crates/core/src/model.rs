//! Discrete factor algebra and the Markov network container.
//!
//! Factor tables are dense and laid out last-variable-fastest (row-major over
//! the scope), which is also the UAI file layout. Every factor carries a
//! natural-log scale so that long products stay inside double range: the
//! represented value of entry `i` is `table[i] * exp(log_scale)`.

use std::collections::BTreeMap;

use thiserror::Error;

/// Dense index of a variable, `0..n`.
pub type VarId = usize;

/// Tables whose largest entry leaves this window are renormalized.
const RESCALE_HIGH: f64 = 1e100;
const RESCALE_LOW: f64 = 1e-100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("variable {var} has cardinality {left} in one place and {right} in another")]
    CardinalityMismatch { var: VarId, left: usize, right: usize },
    #[error("table has {found} entries but the scope requires {expected}")]
    TableLength { expected: usize, found: usize },
    #[error("table entry {index} is {value}; entries must be finite and non-negative")]
    InvalidEntry { index: usize, value: f64 },
    #[error("factor table has no positive entry")]
    AllZero,
    #[error("variable {0} appears more than once in a scope")]
    DuplicateVariable(VarId),
    #[error("variable {0} is not declared in the network")]
    UnknownVariable(VarId),
    #[error("variable {0} is not in the factor scope")]
    NotInScope(VarId),
    #[error("value {value} is out of range for variable {var} (cardinality {cardinality})")]
    ValueOutOfRange {
        var: VarId,
        value: usize,
        cardinality: usize,
    },
    #[error("assignment has no value for variable {0}")]
    MissingValue(VarId),
    #[error("variable {0} has cardinality 0")]
    ZeroCardinality(VarId),
    #[error("table size overflows usize")]
    TooLarge,
}

/// A variable and its domain size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variable {
    pub id: VarId,
    pub cardinality: usize,
}

/// Partial or total map from variable id to value index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Assignment(BTreeMap<VarId, usize>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Takes the values of `vars` out of a dense state vector.
    pub fn from_state(vars: &[VarId], state: &[usize]) -> Self {
        vars.iter().map(|&v| (v, state[v])).collect()
    }

    pub fn get(&self, var: VarId) -> Option<usize> {
        self.0.get(&var).copied()
    }

    pub fn insert(&mut self, var: VarId, value: usize) -> Option<usize> {
        self.0.insert(var, value)
    }

    pub fn remove(&mut self, var: VarId) -> Option<usize> {
        self.0.remove(&var)
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.0.contains_key(&var)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, usize)> + '_ {
        self.0.iter().map(|(&v, &x)| (v, x))
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.0.keys().copied()
    }
}

impl FromIterator<(VarId, usize)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (VarId, usize)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

fn strides_for(cards: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * cards[i + 1];
    }
    strides
}

fn table_size(cards: &[usize]) -> Result<usize, ModelError> {
    cards
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c))
        .ok_or(ModelError::TooLarge)
}

/// A non-negative potential over an ordered scope.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<VarId>,
    cards: Vec<usize>,
    strides: Vec<usize>,
    table: Vec<f64>,
    log_scale: f64,
}

impl Factor {
    /// Builds a validated factor. Entries must be finite and non-negative
    /// with at least one positive entry.
    pub fn new(scope: Vec<VarId>, cards: Vec<usize>, table: Vec<f64>) -> Result<Self, ModelError> {
        if scope.len() != cards.len() {
            return Err(ModelError::TableLength {
                expected: scope.len(),
                found: cards.len(),
            });
        }
        for (i, &v) in scope.iter().enumerate() {
            if scope[..i].contains(&v) {
                return Err(ModelError::DuplicateVariable(v));
            }
            if cards[i] == 0 {
                return Err(ModelError::ZeroCardinality(v));
            }
        }
        let expected = table_size(&cards)?;
        if table.len() != expected {
            return Err(ModelError::TableLength {
                expected,
                found: table.len(),
            });
        }
        if let Some((index, &value)) = table
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || **x < 0.0)
        {
            return Err(ModelError::InvalidEntry { index, value });
        }
        if !table.iter().any(|&x| x > 0.0) {
            return Err(ModelError::AllZero);
        }
        let mut f = Self::from_raw(scope, cards, table, 0.0);
        f.rescale();
        Ok(f)
    }

    /// A factor with empty scope.
    pub fn scalar(value: f64) -> Self {
        Self::from_raw(Vec::new(), Vec::new(), vec![value], 0.0)
    }

    /// The all-ones factor over `scope`.
    pub fn ones(scope: Vec<VarId>, cards: Vec<usize>) -> Result<Self, ModelError> {
        let size = table_size(&cards)?;
        Self::new(scope, cards, vec![1.0; size])
    }

    pub(crate) fn from_raw(scope: Vec<VarId>, cards: Vec<usize>, table: Vec<f64>, log_scale: f64) -> Self {
        debug_assert_eq!(scope.len(), cards.len());
        debug_assert_eq!(table.len(), cards.iter().product::<usize>());
        let strides = strides_for(&cards);
        Factor {
            scope,
            cards,
            strides,
            table,
            log_scale,
        }
    }

    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub(crate) fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Raw table; multiply by `exp(log_scale)` for represented values.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Table entries with the log scale folded in.
    pub fn scaled_table(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.table.iter().map(|x| x * s).collect()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.scope.is_empty()
    }

    pub fn position(&self, var: VarId) -> Option<usize> {
        self.scope.iter().position(|&v| v == var)
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.scope.contains(&var)
    }

    pub fn cardinality_of(&self, var: VarId) -> Option<usize> {
        self.position(var).map(|p| self.cards[p])
    }

    /// Flat table index of the entry selected by a dense state vector.
    #[inline]
    pub fn index_of_state(&self, state: &[usize]) -> usize {
        self.scope
            .iter()
            .zip(&self.strides)
            .map(|(&v, &s)| state[v] * s)
            .sum()
    }

    /// Represented value at a dense state vector.
    pub fn value_at_state(&self, state: &[usize]) -> f64 {
        self.table[self.index_of_state(state)] * self.log_scale.exp()
    }

    /// Represented value at an assignment covering the scope.
    pub fn value_at(&self, assignment: &Assignment) -> Result<f64, ModelError> {
        let mut idx = 0;
        for (p, &v) in self.scope.iter().enumerate() {
            let x = assignment.get(v).ok_or(ModelError::MissingValue(v))?;
            if x >= self.cards[p] {
                return Err(ModelError::ValueOutOfRange {
                    var: v,
                    value: x,
                    cardinality: self.cards[p],
                });
            }
            idx += x * self.strides[p];
        }
        Ok(self.table[idx] * self.log_scale.exp())
    }

    /// Sum of all represented entries.
    pub fn total(&self) -> f64 {
        self.table.iter().sum::<f64>() * self.log_scale.exp()
    }

    /// Pointwise product; the result's scope is `self`'s scope followed by
    /// the variables of `other` not already present.
    pub fn product(&self, other: &Factor) -> Result<Factor, ModelError> {
        Factor::product_all(&[self, other])
    }

    /// Product of any number of factors over the ordered union of scopes.
    pub fn product_all(factors: &[&Factor]) -> Result<Factor, ModelError> {
        let mut scope = Vec::new();
        let mut cards = Vec::new();
        for f in factors {
            for (&v, &c) in f.scope.iter().zip(&f.cards) {
                match scope.iter().position(|&u| u == v) {
                    Some(p) if cards[p] != c => {
                        return Err(ModelError::CardinalityMismatch {
                            var: v,
                            left: cards[p],
                            right: c,
                        })
                    }
                    Some(_) => {}
                    None => {
                        scope.push(v);
                        cards.push(c);
                    }
                }
            }
        }
        table_size(&cards)?;
        Ok(Self::product_over(scope, cards, factors))
    }

    /// Product of `factors` laid out over the given scope, which must be a
    /// superset of every input scope with consistent cardinalities.
    pub(crate) fn product_over(scope: Vec<VarId>, cards: Vec<usize>, factors: &[&Factor]) -> Factor {
        let ndim = scope.len();
        let k = factors.len();
        let total: usize = cards.iter().product();
        // strides[f * ndim + d]: step in factor f's table when output dim d advances
        let mut strides = vec![0usize; k * ndim];
        for (fi, f) in factors.iter().enumerate() {
            for (p, &v) in f.scope.iter().enumerate() {
                let d = scope
                    .iter()
                    .position(|&u| u == v)
                    .expect("product scope must cover input scopes");
                strides[fi * ndim + d] = f.strides[p];
            }
        }
        let log_scale = factors.iter().map(|f| f.log_scale).sum();
        let mut table = Vec::with_capacity(total);
        let mut idx = vec![0usize; k];
        let mut counter = vec![0usize; ndim];
        for _ in 0..total {
            let mut value = 1.0;
            for (fi, f) in factors.iter().enumerate() {
                value *= f.table[idx[fi]];
            }
            table.push(value);
            let mut d = ndim;
            while d > 0 {
                d -= 1;
                counter[d] += 1;
                for fi in 0..k {
                    idx[fi] += strides[fi * ndim + d];
                }
                if counter[d] < cards[d] {
                    break;
                }
                for fi in 0..k {
                    idx[fi] -= strides[fi * ndim + d] * cards[d];
                }
                counter[d] = 0;
            }
        }
        let mut out = Factor::from_raw(scope, cards, table, log_scale);
        out.rescale();
        out
    }

    /// Sums `var` out of the factor.
    pub fn marginalize(&self, var: VarId) -> Result<Factor, ModelError> {
        let p = self.position(var).ok_or(ModelError::NotInScope(var))?;
        let outer: usize = self.cards[..p].iter().product();
        let card = self.cards[p];
        let inner = self.strides[p];
        let mut table = vec![0.0; outer * inner];
        for o in 0..outer {
            for x in 0..card {
                let src = &self.table[(o * card + x) * inner..(o * card + x + 1) * inner];
                for (dst, s) in table[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        scope.remove(p);
        cards.remove(p);
        let mut out = Factor::from_raw(scope, cards, table, self.log_scale);
        out.rescale();
        Ok(out)
    }

    /// Sums out every variable not in `keep`. The result keeps the
    /// surviving variables in this factor's scope order; members of `keep`
    /// outside the scope are ignored.
    pub fn sum_to(&self, keep: &[VarId]) -> Factor {
        let kept: Vec<usize> = (0..self.scope.len())
            .filter(|&p| keep.contains(&self.scope[p]))
            .collect();
        let scope: Vec<VarId> = kept.iter().map(|&p| self.scope[p]).collect();
        let cards: Vec<usize> = kept.iter().map(|&p| self.cards[p]).collect();
        let out_strides = strides_for(&cards);
        let mut map = vec![0usize; self.scope.len()];
        for (k, &p) in kept.iter().enumerate() {
            map[p] = out_strides[k];
        }
        let mut table = vec![0.0; cards.iter().product()];
        let ndim = self.scope.len();
        let mut counter = vec![0usize; ndim];
        let mut out_idx = 0usize;
        for &x in &self.table {
            table[out_idx] += x;
            let mut d = ndim;
            while d > 0 {
                d -= 1;
                counter[d] += 1;
                out_idx += map[d];
                if counter[d] < self.cards[d] {
                    break;
                }
                out_idx -= map[d] * self.cards[d];
                counter[d] = 0;
            }
        }
        let mut out = Factor::from_raw(scope, cards, table, self.log_scale);
        out.rescale();
        out
    }

    /// Conditions on the assigned scope variables, dropping them from the
    /// scope. Assigned variables outside the scope are ignored.
    pub fn reduce(&self, evidence: &Assignment) -> Result<Factor, ModelError> {
        for (p, &v) in self.scope.iter().enumerate() {
            if let Some(x) = evidence.get(v) {
                if x >= self.cards[p] {
                    return Err(ModelError::ValueOutOfRange {
                        var: v,
                        value: x,
                        cardinality: self.cards[p],
                    });
                }
            }
        }
        Ok(self.reduce_with(|v| evidence.get(v)))
    }

    /// Reduction driven by a lookup; values must already be in range.
    pub(crate) fn reduce_with(&self, lookup: impl Fn(VarId) -> Option<usize>) -> Factor {
        let mut base = 0usize;
        let mut kept = Vec::new();
        for (p, &v) in self.scope.iter().enumerate() {
            match lookup(v) {
                Some(x) => base += x * self.strides[p],
                None => kept.push(p),
            }
        }
        if kept.len() == self.scope.len() {
            return self.clone();
        }
        let scope: Vec<VarId> = kept.iter().map(|&p| self.scope[p]).collect();
        let cards: Vec<usize> = kept.iter().map(|&p| self.cards[p]).collect();
        let src_strides: Vec<usize> = kept.iter().map(|&p| self.strides[p]).collect();
        let total: usize = cards.iter().product();
        let mut table = Vec::with_capacity(total);
        let mut counter = vec![0usize; kept.len()];
        let mut idx = base;
        for _ in 0..total {
            table.push(self.table[idx]);
            let mut d = kept.len();
            while d > 0 {
                d -= 1;
                counter[d] += 1;
                idx += src_strides[d];
                if counter[d] < cards[d] {
                    break;
                }
                idx -= src_strides[d] * cards[d];
                counter[d] = 0;
            }
        }
        let mut out = Factor::from_raw(scope, cards, table, self.log_scale);
        out.rescale();
        out
    }

    /// Same factor with its scope reordered to `order` (a permutation of the
    /// current scope).
    pub fn permuted(&self, order: &[VarId]) -> Result<Factor, ModelError> {
        if order.len() != self.scope.len() {
            return Err(ModelError::TableLength {
                expected: self.scope.len(),
                found: order.len(),
            });
        }
        let mut cards = Vec::with_capacity(order.len());
        for &v in order {
            cards.push(self.cardinality_of(v).ok_or(ModelError::NotInScope(v))?);
        }
        Ok(Factor::product_over(order.to_vec(), cards, &[self]))
    }

    /// Renormalizes the table when its largest entry leaves
    /// `[1e-100, 1e100]`, moving the factor into `log_scale`.
    pub fn rescale(&mut self) {
        let max = self.table.iter().fold(0.0f64, |m, &x| m.max(x));
        if max > 0.0 && !(RESCALE_LOW..=RESCALE_HIGH).contains(&max) {
            for x in &mut self.table {
                *x /= max;
            }
            self.log_scale += max.ln();
        }
    }

    /// The table normalized to sum to one, or `None` when all entries are zero.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        let sum: f64 = self.table.iter().sum();
        (sum > 0.0).then(|| self.table.iter().map(|x| x / sum).collect())
    }
}

/// Variables with cardinalities, a factor set, and applied evidence.
#[derive(Debug, Clone)]
pub struct MarkovNetwork {
    cards: Vec<usize>,
    factors: Vec<Factor>,
    evidence: Assignment,
    var_factors: Vec<Vec<usize>>,
}

impl MarkovNetwork {
    pub fn new(cards: Vec<usize>, factors: Vec<Factor>) -> Result<Self, ModelError> {
        if let Some(v) = cards.iter().position(|&c| c == 0) {
            return Err(ModelError::ZeroCardinality(v));
        }
        for f in &factors {
            for (&v, &c) in f.scope().iter().zip(f.cardinalities()) {
                let declared = *cards.get(v).ok_or(ModelError::UnknownVariable(v))?;
                if declared != c {
                    return Err(ModelError::CardinalityMismatch {
                        var: v,
                        left: declared,
                        right: c,
                    });
                }
            }
        }
        Ok(Self::from_parts(cards, factors, Assignment::new()))
    }

    pub(crate) fn from_parts(cards: Vec<usize>, factors: Vec<Factor>, evidence: Assignment) -> Self {
        let mut var_factors = vec![Vec::new(); cards.len()];
        for (i, f) in factors.iter().enumerate() {
            for &v in f.scope() {
                var_factors[v].push(i);
            }
        }
        MarkovNetwork {
            cards,
            factors,
            evidence,
            var_factors,
        }
    }

    /// Conditions every factor on `evidence` and records it. Evidence
    /// variables leave the sampling universe.
    pub fn with_evidence(self, evidence: Assignment) -> Result<Self, ModelError> {
        let mut merged = self.evidence.clone();
        for (v, x) in evidence.iter() {
            let card = *self.cards.get(v).ok_or(ModelError::UnknownVariable(v))?;
            if x >= card {
                return Err(ModelError::ValueOutOfRange {
                    var: v,
                    value: x,
                    cardinality: card,
                });
            }
            if let Some(prev) = merged.insert(v, x) {
                if prev != x {
                    return Err(ModelError::ValueOutOfRange {
                        var: v,
                        value: x,
                        cardinality: card,
                    });
                }
            }
        }
        let factors = self
            .factors
            .iter()
            .map(|f| f.reduce(&evidence))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_parts(self.cards, factors, merged))
    }

    pub fn num_variables(&self) -> usize {
        self.cards.len()
    }

    pub fn cardinality(&self, var: VarId) -> usize {
        self.cards[var]
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.cards.iter().enumerate().map(|(id, &cardinality)| Variable { id, cardinality })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Indices of the factors whose scope contains `var`.
    pub fn factors_of(&self, var: VarId) -> &[usize] {
        &self.var_factors[var]
    }

    pub fn evidence(&self) -> &Assignment {
        &self.evidence
    }

    pub fn is_evidence(&self, var: VarId) -> bool {
        self.evidence.contains(var)
    }

    /// Non-evidence variables, ascending.
    pub fn sampling_universe(&self) -> Vec<VarId> {
        (0..self.cards.len()).filter(|&v| !self.is_evidence(v)).collect()
    }

    /// Unnormalized product of all factors at a full assignment of the
    /// non-evidence variables. Evidence values in `x` are ignored.
    pub fn evaluate(&self, x: &Assignment) -> Result<f64, ModelError> {
        let mut state = vec![0usize; self.cards.len()];
        for (v, slot) in state.iter_mut().enumerate() {
            if let Some(e) = self.evidence.get(v) {
                *slot = e;
                continue;
            }
            let value = x.get(v).ok_or(ModelError::MissingValue(v))?;
            if value >= self.cards[v] {
                return Err(ModelError::ValueOutOfRange {
                    var: v,
                    value,
                    cardinality: self.cards[v],
                });
            }
            *slot = value;
        }
        Ok(self.evaluate_state(&state))
    }

    /// `evaluate` over a dense state vector, values assumed in range.
    pub fn evaluate_state(&self, state: &[usize]) -> f64 {
        let mut log_scale = 0.0;
        let mut value = 1.0;
        for f in &self.factors {
            value *= f.table()[f.index_of_state(state)];
            log_scale += f.log_scale();
        }
        value * log_scale.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(scope: &[VarId], table: &[f64]) -> Factor {
        Factor::new(scope.to_vec(), vec![2; scope.len()], table.to_vec()).unwrap()
    }

    #[test]
    fn product_examples() {
        let ones = f(&[0], &[1.0, 1.0]);
        let g = f(&[0], &[0.3, 0.7]);
        assert_eq!(ones.product(&g).unwrap().scaled_table(), vec![0.3, 0.7]);

        let a = f(&[0], &[1.0, 2.0]);
        let b = f(&[1], &[3.0, 4.0]);
        let ab = a.product(&b).unwrap();
        assert_eq!(ab.scope(), &[0, 1]);
        assert_eq!(ab.scaled_table(), vec![3.0, 4.0, 6.0, 8.0]);

        let a2 = f(&[0], &[3.0, 4.0]);
        assert_eq!(a.product(&a2).unwrap().scaled_table(), vec![3.0, 8.0]);
    }

    #[test]
    fn product_rejects_cardinality_mismatch() {
        let a = f(&[0], &[1.0, 2.0]);
        let b = Factor::new(vec![0], vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            a.product(&b),
            Err(ModelError::CardinalityMismatch { var: 0, .. })
        ));
    }

    #[test]
    fn marginalize_examples() {
        let a = f(&[0], &[0.3, 0.7]);
        let m = a.marginalize(0).unwrap();
        assert!(m.is_scalar());
        assert!((m.total() - 1.0).abs() < 1e-15);

        let ab = f(&[0, 1], &[1.0, 2.0, 3.0, 4.0]);
        let m = ab.marginalize(1).unwrap();
        assert_eq!(m.scope(), &[0]);
        assert_eq!(m.scaled_table(), vec![3.0, 7.0]);

        let ones = f(&[0, 1], &[1.0; 4]);
        assert_eq!(ones.marginalize(1).unwrap().scaled_table(), vec![2.0, 2.0]);

        assert_eq!(ab.marginalize(5), Err(ModelError::NotInScope(5)));
    }

    #[test]
    fn reduce_examples() {
        let ab = f(&[0, 1], &[1.0, 2.0, 3.0, 4.0]);
        let r = ab.reduce(&[(1, 1)].into_iter().collect()).unwrap();
        assert_eq!(r.scope(), &[0]);
        assert_eq!(r.scaled_table(), vec![2.0, 4.0]);

        assert_eq!(ab.reduce(&Assignment::new()).unwrap(), ab);

        let a = f(&[0], &[0.3, 0.7]);
        let r = a.reduce(&[(0, 0)].into_iter().collect()).unwrap();
        assert!(r.is_scalar());
        assert_eq!(r.scaled_table(), vec![0.3]);

        assert!(matches!(
            a.reduce(&[(0, 2)].into_iter().collect()),
            Err(ModelError::ValueOutOfRange { .. })
        ));
    }

    #[test]
    fn evaluate_examples() {
        let net = MarkovNetwork::new(vec![2, 2], vec![f(&[0, 1], &[1.0, 2.0, 3.0, 4.0])]).unwrap();
        let x: Assignment = [(0, 1), (1, 0)].into_iter().collect();
        assert_eq!(net.evaluate(&x).unwrap(), 3.0);

        let empty = MarkovNetwork::new(vec![2], vec![]).unwrap();
        assert_eq!(empty.evaluate(&[(0, 1)].into_iter().collect()).unwrap(), 1.0);

        let scalars = MarkovNetwork::new(vec![], vec![Factor::scalar(2.0), Factor::scalar(5.0)]).unwrap();
        assert_eq!(scalars.evaluate(&Assignment::new()).unwrap(), 10.0);

        assert_eq!(
            net.evaluate(&[(0, 1)].into_iter().collect()),
            Err(ModelError::MissingValue(1))
        );
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            Factor::new(vec![0, 1], vec![2, 2], vec![1.0; 3]),
            Err(ModelError::TableLength { expected: 4, found: 3 })
        ));
        assert_eq!(Factor::new(vec![0], vec![2], vec![0.0, 0.0]), Err(ModelError::AllZero));
        assert!(matches!(
            Factor::new(vec![0], vec![2], vec![-1.0, 1.0]),
            Err(ModelError::InvalidEntry { index: 0, .. })
        ));
        assert_eq!(
            Factor::new(vec![0, 0], vec![2, 2], vec![1.0; 4]),
            Err(ModelError::DuplicateVariable(0))
        );
        assert_eq!(
            MarkovNetwork::new(vec![2], vec![f(&[0, 1], &[1.0; 4])]).unwrap_err(),
            ModelError::UnknownVariable(1)
        );
    }

    #[test]
    fn evidence_is_applied_by_reduction() {
        let net = MarkovNetwork::new(vec![2, 2], vec![f(&[0, 1], &[1.0, 2.0, 3.0, 4.0])])
            .unwrap()
            .with_evidence([(1, 1)].into_iter().collect())
            .unwrap();
        assert_eq!(net.sampling_universe(), vec![0]);
        assert_eq!(net.factors()[0].scope(), &[0]);
        assert_eq!(net.factors()[0].scaled_table(), vec![2.0, 4.0]);
        assert!(net.factors_of(1).is_empty());
    }

    #[test]
    fn huge_products_rescale() {
        let big = Factor::new(vec![0], vec![2], vec![1e80, 1e80]).unwrap();
        let p = big.product(&big).unwrap();
        let p = p.product(&big).unwrap();
        assert!(p.table().iter().all(|&x| x <= 1e100));
        let expected = 3.0 * 1e80f64.ln();
        assert!(((p.table()[0].ln() + p.log_scale()) - expected).abs() < 1e-9);
    }

    #[test]
    fn sum_to_matches_repeated_marginalize() {
        let t: Vec<f64> = (1..=8).map(|x| x as f64).collect();
        let abc = Factor::new(vec![0, 1, 2], vec![2, 2, 2], t).unwrap();
        let a = abc.sum_to(&[0]);
        let b = abc.marginalize(2).unwrap().marginalize(1).unwrap();
        assert_eq!(a.scaled_table(), b.scaled_table());
        let ac = abc.sum_to(&[2, 0]);
        assert_eq!(ac.scope(), &[0, 2]);
        assert_eq!(ac.scaled_table(), abc.marginalize(1).unwrap().scaled_table());
    }

    #[test]
    fn permuted_reorders_entries() {
        let ab = f(&[0, 1], &[1.0, 2.0, 3.0, 4.0]);
        let ba = ab.permuted(&[1, 0]).unwrap();
        assert_eq!(ba.scope(), &[1, 0]);
        assert_eq!(ba.scaled_table(), vec![1.0, 3.0, 2.0, 4.0]);
    }
}
