use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::distribution::Distribution;
use crate::error::{Error, Result};

/// Cap on the number of states any operation will enumerate.
///
/// The complete binary tree used by the exponential-shift construction has
/// `2^(H+1) - 1` states over layers `1..=H+1`, so this admits it up to `H = 15`.
pub const ENUMERATION_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpKind {
    /// Layered, time-inhomogeneous; layers `0..=horizon`, the last one terminal.
    Episodic { horizon: usize },
    Discounted { gamma: f64 },
}

/// Procedural dynamics, answering queries one state at a time.
///
/// Implementations must be pure: the same query always gets the same answer.
pub trait Oracle: Send + Sync + fmt::Debug {
    /// Whether `state` is a member of the state set at `layer`.
    fn contains(&self, layer: usize, state: &str) -> bool;
    fn transition(&self, layer: usize, state: &str, action: usize) -> Result<Distribution>;
    fn reward(&self, layer: usize, state: &str, action: usize) -> Result<f64>;
}

/// Per-layer ordered state sets with a name index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateSpace {
    layers: Vec<Vec<String>>,
    index: Vec<HashMap<String, usize>>,
}

impl StateSpace {
    pub fn new(layers: Vec<Vec<String>>) -> Result<Self> {
        let mut index = Vec::with_capacity(layers.len());
        for (h, states) in layers.iter().enumerate() {
            let mut map = HashMap::with_capacity(states.len());
            for (i, s) in states.iter().enumerate() {
                if map.insert(s.clone(), i).is_some() {
                    return Err(Error::Schema(format!(
                        "state {s:?} listed twice in layer {h}"
                    )));
                }
            }
            index.push(map);
        }
        Ok(Self { layers, index })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, h: usize) -> &[String] {
        &self.layers[h]
    }

    pub fn layers(&self) -> &[Vec<String>] {
        &self.layers
    }

    pub fn index_of(&self, h: usize, state: &str) -> Option<usize> {
        self.index.get(h)?.get(state).copied()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

#[derive(Debug)]
struct TableModel {
    space: StateSpace,
    /// `[layer][state][action]`, empty for the terminal layer.
    transitions: Vec<Vec<Vec<Distribution>>>,
    rewards: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
enum Model {
    Table(Arc<TableModel>),
    Oracle(Arc<dyn Oracle>),
}

/// A finite MDP with a deterministic initial state.
#[derive(Debug, Clone)]
pub struct Mdp {
    name: String,
    kind: MdpKind,
    actions: Vec<String>,
    initial: String,
    rmax: f64,
    model: Model,
}

impl Mdp {
    /// Wraps a procedural oracle.
    pub fn procedural(
        name: impl Into<String>,
        kind: MdpKind,
        actions: Vec<String>,
        initial: impl Into<String>,
        rmax: f64,
        oracle: Arc<dyn Oracle>,
    ) -> Self {
        Self {
            name: name.into(),
            kind,
            actions,
            initial: initial.into(),
            rmax,
            model: Model::Oracle(oracle),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn kind(&self) -> MdpKind {
        self.kind
    }

    pub fn horizon(&self) -> Option<usize> {
        match self.kind {
            MdpKind::Episodic { horizon } => Some(horizon),
            MdpKind::Discounted { .. } => None,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            MdpKind::Discounted { gamma } => Some(gamma),
            MdpKind::Episodic { .. } => None,
        }
    }

    pub fn is_episodic(&self) -> bool {
        matches!(self.kind, MdpKind::Episodic { .. })
    }

    pub fn require_episodic(&self) -> Result<usize> {
        self.horizon().ok_or(Error::KindMismatch {
            expected: "an episodic",
        })
    }

    pub fn require_discounted(&self) -> Result<f64> {
        self.gamma().ok_or(Error::KindMismatch {
            expected: "a discounted",
        })
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn initial(&self) -> &str {
        &self.initial
    }

    pub fn rmax(&self) -> f64 {
        self.rmax
    }

    /// Upper bound on any return: `rmax / (1 - γ)` or `rmax · H`.
    pub fn vmax(&self) -> f64 {
        match self.kind {
            MdpKind::Episodic { horizon } => self.rmax * horizon as f64,
            MdpKind::Discounted { gamma } => self.rmax / (1.0 - gamma),
        }
    }

    pub fn is_procedural(&self) -> bool {
        matches!(self.model, Model::Oracle(_))
    }

    /// Number of state layers (`H + 1` episodic, `1` discounted).
    pub fn num_layers(&self) -> usize {
        match self.kind {
            MdpKind::Episodic { horizon } => horizon + 1,
            MdpKind::Discounted { .. } => 1,
        }
    }

    /// Layers at which actions are taken.
    pub fn decision_layers(&self) -> std::ops::Range<usize> {
        match self.kind {
            MdpKind::Episodic { horizon } => 0..horizon,
            MdpKind::Discounted { .. } => 0..1,
        }
    }

    pub fn next_layer(&self, layer: usize) -> usize {
        match self.kind {
            MdpKind::Episodic { .. } => layer + 1,
            MdpKind::Discounted { .. } => 0,
        }
    }

    pub fn is_terminal(&self, layer: usize) -> bool {
        matches!(self.kind, MdpKind::Episodic { horizon } if layer >= horizon)
    }

    pub fn contains(&self, layer: usize, state: &str) -> bool {
        match &self.model {
            Model::Table(t) => t.space.index_of(layer, state).is_some(),
            Model::Oracle(o) => layer < self.num_layers() && o.contains(layer, state),
        }
    }

    fn check_query(&self, layer: usize, action: usize) -> Result<()> {
        if action >= self.actions.len() {
            return Err(Error::UnknownAction(action));
        }
        if layer >= self.num_layers() || self.is_terminal(layer) {
            return Err(Error::InvalidParameter(format!(
                "layer {layer} has no actions"
            )));
        }
        Ok(())
    }

    pub fn transition(&self, layer: usize, state: &str, action: usize) -> Result<Cow<'_, Distribution>> {
        self.check_query(layer, action)?;
        match &self.model {
            Model::Table(t) => {
                let i = t.space.index_of(layer, state).ok_or_else(|| Error::UnknownState {
                    layer,
                    state: state.to_string(),
                })?;
                Ok(Cow::Borrowed(&t.transitions[layer][i][action]))
            }
            Model::Oracle(o) => {
                if !o.contains(layer, state) {
                    return Err(Error::UnknownState {
                        layer,
                        state: state.to_string(),
                    });
                }
                o.transition(layer, state, action).map(Cow::Owned)
            }
        }
    }

    pub fn reward(&self, layer: usize, state: &str, action: usize) -> Result<f64> {
        self.check_query(layer, action)?;
        match &self.model {
            Model::Table(t) => {
                let i = t.space.index_of(layer, state).ok_or_else(|| Error::UnknownState {
                    layer,
                    state: state.to_string(),
                })?;
                Ok(t.rewards[layer][i][action])
            }
            Model::Oracle(o) => {
                if !o.contains(layer, state) {
                    return Err(Error::UnknownState {
                        layer,
                        state: state.to_string(),
                    });
                }
                o.reward(layer, state, action)
            }
        }
    }

    /// States reachable from the initial state under any action, in BFS order
    /// (support order within a row). Zero-mass support entries count as
    /// reachable so that tabulating keeps every row intact.
    pub fn reachable_states(&self, limit: usize) -> Result<StateSpace> {
        let mut layers: Vec<Vec<String>> = vec![Vec::new(); self.num_layers()];
        let mut seen: Vec<std::collections::HashSet<String>> =
            vec![Default::default(); self.num_layers()];
        let mut queue = VecDeque::new();
        let mut count = 1usize;
        layers[0].push(self.initial.clone());
        seen[0].insert(self.initial.clone());
        queue.push_back((0usize, self.initial.clone()));
        while let Some((h, s)) = queue.pop_front() {
            if self.is_terminal(h) {
                continue;
            }
            let nh = self.next_layer(h);
            for a in 0..self.num_actions() {
                let row = self.transition(h, &s, a)?;
                for next in row.support() {
                    if seen[nh].insert(next.clone()) {
                        count += 1;
                        if count > limit {
                            return Err(Error::TooLarge {
                                what: "reachable state set",
                                size: count,
                                limit,
                            });
                        }
                        layers[nh].push(next.clone());
                        queue.push_back((nh, next.clone()));
                    }
                }
            }
        }
        StateSpace::new(layers)
    }

    /// The state set every exact operation works over: listed states for
    /// tables, reachable states for oracles (refusing beyond
    /// [`ENUMERATION_LIMIT`]).
    pub fn state_space(&self) -> Result<StateSpace> {
        match &self.model {
            Model::Table(t) => Ok(t.space.clone()),
            Model::Oracle(_) => self.reachable_states(ENUMERATION_LIMIT),
        }
    }

    /// Explicit copy of a procedural MDP over its reachable states.
    pub fn tabulate(&self) -> Result<Mdp> {
        if let Model::Table(_) = self.model {
            return Ok(self.clone());
        }
        let space = self.state_space()?;
        let mut b = MdpBuilder::new(self.kind, self.actions.clone());
        for states in space.layers() {
            b = b.layer(states.iter().cloned());
        }
        for h in self.decision_layers() {
            for s in space.layer(h) {
                for a in 0..self.num_actions() {
                    let row = self.transition(h, s, a)?.into_owned();
                    b = b.row(h, s, a, self.reward(h, s, a)?, row);
                }
            }
        }
        Ok(b.initial(self.initial.clone())
            .rmax(self.rmax)
            .name(self.name.clone())
            .build()?)
    }

    pub(crate) fn compile(&self) -> Result<Compiled> {
        Compiled::new(self)
    }
}

/// Index-based copy of an MDP for dynamic programming.
#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub space: StateSpace,
    /// `[layer][state][action]` → `(next index, prob)` in support order.
    pub next: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
}

impl Compiled {
    fn new(m: &Mdp) -> Result<Self> {
        let space = m.state_space()?;
        let mut next = vec![Vec::new(); m.num_layers()];
        let mut reward = vec![Vec::new(); m.num_layers()];
        for h in m.decision_layers() {
            let nh = m.next_layer(h);
            for s in space.layer(h) {
                let mut rows = Vec::with_capacity(m.num_actions());
                let mut rs = Vec::with_capacity(m.num_actions());
                for a in 0..m.num_actions() {
                    let d = m.transition(h, s, a)?;
                    let row = d
                        .iter()
                        .map(|(ns, p)| {
                            space
                                .index_of(nh, ns)
                                .map(|j| (j, p))
                                .ok_or_else(|| Error::UnknownState {
                                    layer: nh,
                                    state: ns.to_string(),
                                })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    rows.push(row);
                    rs.push(m.reward(h, s, a)?);
                }
                next[h].push(rows);
                reward[h].push(rs);
            }
        }
        Ok(Self {
            space,
            next,
            reward,
        })
    }
}

/// Collects rows for an explicit MDP.
///
/// `build` checks only structure (every decision-layer `(s, a)` has a row and
/// the initial state exists); row contents are reported by
/// [`validate`](super::validate).
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    name: String,
    kind: MdpKind,
    actions: Vec<String>,
    layers: Vec<Vec<String>>,
    rows: BTreeMap<(usize, String, usize), (f64, Distribution)>,
    initial: Option<String>,
    rmax: f64,
}

impl MdpBuilder {
    pub fn new(kind: MdpKind, actions: Vec<String>) -> Self {
        Self {
            name: "explicit".into(),
            kind,
            actions,
            layers: Vec::new(),
            rows: BTreeMap::new(),
            initial: None,
            rmax: 1.0,
        }
    }

    pub fn episodic<S: Into<String>>(horizon: usize, actions: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            MdpKind::Episodic { horizon },
            actions.into_iter().map(Into::into).collect(),
        )
    }

    pub fn discounted<S: Into<String>>(gamma: f64, actions: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            MdpKind::Discounted { gamma },
            actions.into_iter().map(Into::into).collect(),
        )
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Appends the next layer's state set.
    pub fn layer<S: Into<String>>(mut self, states: impl IntoIterator<Item = S>) -> Self {
        self.layers.push(states.into_iter().map(Into::into).collect());
        self
    }

    pub fn row(mut self, layer: usize, state: &str, action: usize, reward: f64, next: Distribution) -> Self {
        self.rows
            .insert((layer, state.to_string(), action), (reward, next));
        self
    }

    pub fn initial(mut self, state: impl Into<String>) -> Self {
        self.initial = Some(state.into());
        self
    }

    pub fn rmax(mut self, rmax: f64) -> Self {
        self.rmax = rmax;
        self
    }

    pub fn build(mut self) -> Result<Mdp> {
        let expected_layers = match self.kind {
            MdpKind::Episodic { horizon } => {
                if horizon == 0 {
                    return Err(Error::InvalidParameter("horizon must be positive".into()));
                }
                horizon + 1
            }
            MdpKind::Discounted { gamma } => {
                if !(0.0..1.0).contains(&gamma) {
                    return Err(Error::InvalidParameter(format!("gamma {gamma} not in [0,1)")));
                }
                1
            }
        };
        if self.layers.len() != expected_layers {
            return Err(Error::Schema(format!(
                "expected {expected_layers} state layers, got {}",
                self.layers.len()
            )));
        }
        if self.actions.is_empty() {
            return Err(Error::Schema("empty action set".into()));
        }
        let space = StateSpace::new(std::mem::take(&mut self.layers))?;
        let initial = self
            .initial
            .ok_or_else(|| Error::Schema("missing initial state".into()))?;
        if space.index_of(0, &initial).is_none() {
            return Err(Error::UnknownState {
                layer: 0,
                state: initial,
            });
        }
        let decision = match self.kind {
            MdpKind::Episodic { horizon } => horizon,
            MdpKind::Discounted { .. } => 1,
        };
        let mut transitions = vec![Vec::new(); expected_layers];
        let mut rewards = vec![Vec::new(); expected_layers];
        for h in 0..decision {
            for s in space.layer(h) {
                let mut ts = Vec::with_capacity(self.actions.len());
                let mut rs = Vec::with_capacity(self.actions.len());
                for a in 0..self.actions.len() {
                    let (r, d) = self.rows.remove(&(h, s.clone(), a)).ok_or_else(|| {
                        Error::Schema(format!(
                            "missing row for state {s:?}, action {:?} at layer {h}",
                            self.actions[a]
                        ))
                    })?;
                    ts.push(d);
                    rs.push(r);
                }
                transitions[h].push(ts);
                rewards[h].push(rs);
            }
        }
        if let Some(((h, s, _), _)) = self.rows.into_iter().next() {
            return Err(Error::UnknownState { layer: h, state: s });
        }
        Ok(Mdp {
            name: self.name,
            kind: self.kind,
            actions: self.actions,
            initial,
            rmax: self.rmax,
            model: Model::Table(Arc::new(TableModel {
                space,
                transitions,
                rewards,
            })),
        })
    }
}
