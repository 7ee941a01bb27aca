//! Domain types: agents, element traces, umwelten and the mask pool.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use glam::DVec3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Visibility threshold below which a trace no longer counts as perceived.
pub const EPS_VIS: f64 = 0.01;

/// Number of masks on the substrate tower.
pub const MASK_CAPACITY: usize = 6;

/// Tolerance on the norm of a facing vector.
pub const FACING_NORM_TOL: f64 = 1e-9;

pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent-{}", self.0)
    }
}

/// The five perceptual elements an umwelt can carry. The set is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Nitrogen,
    Phosphorus,
    Sugar,
    Signal,
    Water,
}

impl ElementKind {
    pub const ALL: [ElementKind; 5] = [
        ElementKind::Nitrogen,
        ElementKind::Phosphorus,
        ElementKind::Sugar,
        ElementKind::Signal,
        ElementKind::Water,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Nitrogen => "nitrogen",
            ElementKind::Phosphorus => "phosphorus",
            ElementKind::Sugar => "sugar",
            ElementKind::Signal => "signal",
            ElementKind::Water => "water",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One element in an umwelt. `intensity` is vividness, `spread` is spatial
/// extent; both live in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementTrace {
    pub kind: ElementKind,
    pub intensity: f64,
    pub spread: f64,
    pub native: bool,
    /// The agent whose native element this trace ultimately derives from.
    pub origin: AgentId,
}

impl ElementTrace {
    pub fn native(kind: ElementKind, owner: AgentId) -> Self {
        Self {
            kind,
            intensity: 1.0,
            spread: 1.0,
            native: true,
            origin: owner,
        }
    }

    /// A freshly seeded foreign trace: invisible until transfer raises it.
    pub fn seed(kind: ElementKind, origin: AgentId) -> Self {
        Self {
            kind,
            intensity: 0.0,
            spread: 0.0,
            native: false,
            origin,
        }
    }

    pub fn is_visible(&self, eps_vis: f64) -> bool {
        self.intensity >= eps_vis
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantViolation {
    #[error("{owner}: trace {kind} out of bounds (intensity {intensity}, spread {spread})")]
    OutOfBounds {
        owner: AgentId,
        kind: ElementKind,
        intensity: f64,
        spread: f64,
    },
    #[error("{owner}: native trace {kind} is not at full intensity and spread")]
    NativeDimmed { owner: AgentId, kind: ElementKind },
    #[error("{owner}: expected exactly one native trace of kind {expected}, found {found}")]
    NativeCount {
        owner: AgentId,
        expected: ElementKind,
        found: usize,
    },
    #[error("{owner}: trace map key {key} holds a {kind} trace")]
    KeyMismatch {
        owner: AgentId,
        key: ElementKind,
        kind: ElementKind,
    },
}

/// An agent's perceptual world: at most one trace per element kind, exactly
/// one of which is native.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Umwelt {
    owner: AgentId,
    native_kind: ElementKind,
    traces: BTreeMap<ElementKind, ElementTrace>,
}

impl Umwelt {
    pub fn new(owner: AgentId, native_kind: ElementKind) -> Self {
        let mut traces = BTreeMap::new();
        traces.insert(native_kind, ElementTrace::native(native_kind, owner));
        Self {
            owner,
            native_kind,
            traces,
        }
    }

    pub fn owner(&self) -> AgentId {
        self.owner
    }

    pub fn native_kind(&self) -> ElementKind {
        self.native_kind
    }

    pub fn get(&self, kind: ElementKind) -> Option<&ElementTrace> {
        self.traces.get(&kind)
    }

    pub fn traces(&self) -> impl Iterator<Item = &ElementTrace> {
        self.traces.values()
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Foreign (non-native) traces, in kind order.
    pub fn foreign(&self) -> impl Iterator<Item = &ElementTrace> {
        self.traces.values().filter(|t| !t.native)
    }

    pub(crate) fn foreign_mut(&mut self) -> impl Iterator<Item = &mut ElementTrace> {
        self.traces.values_mut().filter(|t| !t.native)
    }

    pub(crate) fn entry_foreign(&mut self, kind: ElementKind, origin: AgentId) -> &mut ElementTrace {
        debug_assert_ne!(kind, self.native_kind);
        self.traces
            .entry(kind)
            .or_insert_with(|| ElementTrace::seed(kind, origin))
    }

    pub(crate) fn retain_foreign(&mut self, mut keep: impl FnMut(&ElementTrace) -> bool) {
        self.traces.retain(|_, t| t.native || keep(t));
    }

    /// Inserts or replaces a foreign trace. Native kinds are rejected.
    pub fn set_foreign(&mut self, trace: ElementTrace) -> bool {
        if trace.native || trace.kind == self.native_kind {
            return false;
        }
        let mut trace = trace;
        trace.intensity = trace.intensity.clamp(0.0, 1.0);
        trace.spread = trace.spread.clamp(0.0, 1.0);
        self.traces.insert(trace.kind, trace);
        true
    }

    /// Number of traces at or above the visibility threshold. Never below 1.
    pub fn richness(&self, eps_vis: f64) -> usize {
        self.traces
            .values()
            .filter(|t| t.native || t.is_visible(eps_vis))
            .count()
    }

    /// Shannon entropy (natural log) of the normalized trace intensities.
    pub fn diversity(&self) -> f64 {
        let total: f64 = self.traces.values().map(|t| t.intensity).sum();
        if total <= 0.0 {
            return 0.0;
        }
        let h: f64 = self
            .traces
            .values()
            .filter(|t| t.intensity > 0.0)
            .map(|t| {
                let p = t.intensity / total;
                -p * p.ln()
            })
            .sum();
        // -0.0 for a single trace
        h.max(0.0)
    }

    pub fn total_intensity(&self) -> f64 {
        self.traces.values().map(|t| t.intensity).sum()
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let mut natives = 0;
        for (key, t) in &self.traces {
            if *key != t.kind {
                return Err(InvariantViolation::KeyMismatch {
                    owner: self.owner,
                    key: *key,
                    kind: t.kind,
                });
            }
            let in_range = |x: f64| (0.0..=1.0).contains(&x);
            if !in_range(t.intensity) || !in_range(t.spread) {
                return Err(InvariantViolation::OutOfBounds {
                    owner: self.owner,
                    kind: t.kind,
                    intensity: t.intensity,
                    spread: t.spread,
                });
            }
            if t.native {
                natives += 1;
                if t.intensity != 1.0 || t.spread != 1.0 {
                    return Err(InvariantViolation::NativeDimmed {
                        owner: self.owner,
                        kind: t.kind,
                    });
                }
            }
        }
        let native_ok = self
            .traces
            .get(&self.native_kind)
            .is_some_and(|t| t.native);
        if natives != 1 || !native_ok {
            return Err(InvariantViolation::NativeCount {
                owner: self.owner,
                expected: self.native_kind,
                found: natives,
            });
        }
        Ok(())
    }
}

pub fn richness(u: &Umwelt, eps_vis: f64) -> usize {
    u.richness(eps_vis)
}

pub fn diversity(u: &Umwelt) -> f64 {
    u.diversity()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum MaskState {
    Held { since: Tick },
    None,
}

impl MaskState {
    pub fn is_held(&self) -> bool {
        matches!(self, MaskState::Held { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub position: DVec3,
    pub facing: DVec3,
    pub hand_position: DVec3,
    pub mask: MaskState,
    /// Present exactly when the mask is held.
    pub umwelt: Option<Umwelt>,
}

impl AgentState {
    /// A maskless agent at `position` with its hand at the body.
    pub fn new(id: AgentId, position: DVec3, facing: DVec3) -> Self {
        Self {
            id,
            position,
            facing: normalize_facing(facing),
            hand_position: position,
            mask: MaskState::None,
            umwelt: None,
        }
    }

    pub fn with_hand(mut self, hand_position: DVec3) -> Self {
        self.hand_position = hand_position;
        self
    }

    pub fn is_masked(&self) -> bool {
        self.mask.is_held()
    }

    pub fn put_on_mask(&mut self, kind: ElementKind, now: Tick) {
        self.mask = MaskState::Held { since: now };
        self.umwelt = Some(Umwelt::new(self.id, kind));
    }

    pub fn take_off_mask(&mut self) {
        self.mask = MaskState::None;
        self.umwelt = None;
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.facing.length();
        if (n - 1.0).abs() > FACING_NORM_TOL {
            return Err(format!("{}: facing norm {n}", self.id));
        }
        if self.mask.is_held() != self.umwelt.is_some() {
            return Err(format!("{}: umwelt presence disagrees with mask state", self.id));
        }
        if let Some(u) = &self.umwelt {
            if u.owner() != self.id {
                return Err(format!("{}: umwelt owned by {}", self.id, u.owner()));
            }
            u.check_invariants().map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

/// Normalizes a facing vector; a zero vector falls back to +x.
pub fn normalize_facing(v: DVec3) -> DVec3 {
    v.try_normalize().unwrap_or(DVec3::X)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PoolError {
    #[error("all {MASK_CAPACITY} masks are in use")]
    PoolExhausted,
    #[error("{0} already holds a mask")]
    AlreadyHeld(AgentId),
    #[error("{0} does not hold a mask")]
    NotHeld(AgentId),
}

/// The substrate tower: a capacity-limited set of masks plus the shuffled
/// deck that assigns each new wearer a native element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPool {
    capacity: usize,
    held: BTreeSet<AgentId>,
    deck: Vec<ElementKind>,
}

impl Default for MaskPool {
    fn default() -> Self {
        Self::new()
    }
}

impl MaskPool {
    pub fn new() -> Self {
        Self {
            capacity: MASK_CAPACITY,
            held: BTreeSet::new(),
            deck: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn held(&self) -> &BTreeSet<AgentId> {
        &self.held
    }

    pub fn is_held(&self, agent: AgentId) -> bool {
        self.held.contains(&agent)
    }

    /// Kinds still pending in the current deck, front first.
    pub fn deck(&self) -> &[ElementKind] {
        &self.deck
    }

    pub fn grab_mask<R: Rng + ?Sized>(
        &mut self,
        agent: AgentId,
        rng: &mut R,
    ) -> Result<ElementKind, PoolError> {
        if self.held.contains(&agent) {
            return Err(PoolError::AlreadyHeld(agent));
        }
        if self.held.len() >= self.capacity {
            return Err(PoolError::PoolExhausted);
        }
        if self.deck.is_empty() {
            let mut fresh = ElementKind::ALL.to_vec();
            fresh.shuffle(rng);
            self.deck = fresh;
        }
        let kind = self.deck.remove(0);
        self.held.insert(agent);
        Ok(kind)
    }

    pub fn return_mask(&mut self, agent: AgentId) -> Result<(), PoolError> {
        if self.held.remove(&agent) {
            Ok(())
        } else {
            Err(PoolError::NotHeld(agent))
        }
    }
}
