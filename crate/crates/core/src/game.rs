//! Agents, actions and the episode state machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{Cell, GridMap};

/// Default episode horizon in steps.
pub const DEFAULT_HORIZON: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Hlp,
    Llp,
    Evader,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Hlp, Role::Llp, Role::Evader];

    /// Ground agents are bound to accessible cells; the HLP flies above them.
    pub fn is_ground(self) -> bool {
        !matches!(self, Role::Hlp)
    }

    pub fn glyph(self) -> char {
        match self {
            Role::Hlp => 'H',
            Role::Llp => 'L',
            Role::Evader => 'E',
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Hlp => "HLP",
            Role::Llp => "LLP",
            Role::Evader => "Evader",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    S,
    E,
    W,
}

impl Heading {
    /// (dcol, drow) of a unit move in this direction.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::S => (0, 1),
            Heading::E => (1, 0),
            Heading::W => (-1, 0),
        }
    }
}

/// Per-agent action. The declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    MoveN,
    MoveS,
    MoveE,
    MoveW,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::MoveN, Action::MoveS, Action::MoveE, Action::MoveW, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn heading(self) -> Option<Heading> {
        match self {
            Action::MoveN => Some(Heading::N),
            Action::MoveS => Some(Heading::S),
            Action::MoveE => Some(Heading::E),
            Action::MoveW => Some(Heading::W),
            Action::Stay => None,
        }
    }

    pub fn apply(self, c: Cell) -> Cell {
        match self.heading() {
            Some(h) => {
                let (dc, dr) = h.delta();
                c.offset(dc, dr)
            }
            None => c,
        }
    }
}

/// Small set of actions, iterated in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const ALL: ActionSet = ActionSet(0b1_1111);

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// The `i`-th member in tie-break order.
    pub fn nth(self, i: usize) -> Option<Action> {
        self.iter().nth(i)
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut s = ActionSet::EMPTY;
        for a in iter {
            s.insert(a);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub role: Role,
    pub position: Cell,
    pub heading: Heading,
}

impl AgentState {
    pub fn new(role: Role, position: Cell, heading: Heading) -> Self {
        Self { role, position, heading }
    }

    fn moved(self, action: Action) -> Self {
        match action.heading() {
            Some(h) => Self { position: action.apply(self.position), heading: h, ..self },
            None => self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Running,
    PursuerWin,
    EvaderWin,
    Timeout,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }

    pub fn pursuers_won(self) -> bool {
        self == Status::PursuerWin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub hlp: Action,
    pub llp: Action,
    pub evader: Action,
}

impl JointAction {
    pub const STAY: JointAction = JointAction { hlp: Action::Stay, llp: Action::Stay, evader: Action::Stay };

    pub fn new(hlp: Action, llp: Action, evader: Action) -> Self {
        Self { hlp, llp, evader }
    }

    pub fn get(&self, role: Role) -> Action {
        match role {
            Role::Hlp => self.hlp,
            Role::Llp => self.llp,
            Role::Evader => self.evader,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("invalid action {action:?} for {role} at {position}")]
    InvalidAction { role: Role, action: Action, position: Cell },
    #[error("episode already finished with status {0:?}")]
    EpisodeFinished(Status),
    #[error("invalid placement of {role} at {position}: {reason}")]
    InvalidPlacement { role: Role, position: Cell, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeState {
    pub hlp: AgentState,
    pub llp: AgentState,
    pub evader: AgentState,
    pub evader_goal: Cell,
    pub t: u32,
    pub horizon: u32,
    pub status: Status,
}

impl EpisodeState {
    /// Validates placements and applies the terminal check at t = 0.
    pub fn new(
        map: &GridMap,
        hlp: AgentState,
        llp: AgentState,
        evader: AgentState,
        evader_goal: Cell,
        horizon: u32,
    ) -> Result<Self, GameError> {
        if !map.in_bounds(hlp.position) {
            return Err(GameError::InvalidPlacement { role: Role::Hlp, position: hlp.position, reason: "off map" });
        }
        for a in [llp, evader] {
            if !map.is_accessible(a.position) {
                return Err(GameError::InvalidPlacement { role: a.role, position: a.position, reason: "inaccessible" });
            }
        }
        if !map.is_accessible(evader_goal) {
            return Err(GameError::InvalidPlacement {
                role: Role::Evader,
                position: evader_goal,
                reason: "goal inaccessible",
            });
        }
        if evader_goal == evader.position {
            return Err(GameError::InvalidPlacement {
                role: Role::Evader,
                position: evader_goal,
                reason: "goal equals start",
            });
        }
        let mut state = Self { hlp, llp, evader, evader_goal, t: 0, horizon, status: Status::Running };
        state.status = check_terminal(&state, horizon);
        Ok(state)
    }

    pub fn agent(&self, role: Role) -> &AgentState {
        match role {
            Role::Hlp => &self.hlp,
            Role::Llp => &self.llp,
            Role::Evader => &self.evader,
        }
    }

    fn agent_mut(&mut self, role: Role) -> &mut AgentState {
        match role {
            Role::Hlp => &mut self.hlp,
            Role::Llp => &mut self.llp,
            Role::Evader => &mut self.evader,
        }
    }
}

/// Legal actions for an agent. Stay is always legal; moves must stay on the
/// map and, for ground agents, land on an accessible cell.
pub fn valid_actions(map: &GridMap, agent: &AgentState) -> ActionSet {
    Action::ALL
        .into_iter()
        .filter(|a| {
            let dest = a.apply(agent.position);
            if agent.role.is_ground() {
                map.is_accessible(dest)
            } else {
                map.in_bounds(dest)
            }
        })
        .collect()
}

/// Capture is the LLP's job only: Chebyshev distance at most one.
pub fn is_capture(llp: Cell, evader: Cell) -> bool {
    llp.chebyshev(evader) <= 1
}

/// Terminal predicate. Capture takes precedence over the evader reaching its
/// goal in the same step; the horizon only applies when neither holds.
pub fn check_terminal(state: &EpisodeState, horizon: u32) -> Status {
    if is_capture(state.llp.position, state.evader.position) {
        Status::PursuerWin
    } else if state.evader.position == state.evader_goal {
        Status::EvaderWin
    } else if state.t >= horizon {
        Status::Timeout
    } else {
        Status::Running
    }
}

/// Advances all three agents simultaneously by one timestep.
pub fn step(map: &GridMap, state: &EpisodeState, action: &JointAction) -> Result<EpisodeState, GameError> {
    step_in_order(map, state, action, Role::ALL)
}

fn step_in_order(
    map: &GridMap,
    state: &EpisodeState,
    action: &JointAction,
    order: [Role; 3],
) -> Result<EpisodeState, GameError> {
    if state.status.is_terminal() {
        return Err(GameError::EpisodeFinished(state.status));
    }
    for role in order {
        let agent = state.agent(role);
        let a = action.get(role);
        if !valid_actions(map, agent).contains(a) {
            return Err(GameError::InvalidAction { role, action: a, position: agent.position });
        }
    }
    let mut next = state.clone();
    // Moves read only the pre-step state, so evaluation order is irrelevant.
    for role in order {
        *next.agent_mut(role) = state.agent(role).moved(action.get(role));
    }
    next.t = state.t + 1;
    let swapped = next.llp.position == state.evader.position && next.evader.position == state.llp.position;
    next.status = if swapped { Status::PursuerWin } else { check_terminal(&next, state.horizon) };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::load_map;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn agent(role: Role, col: i32, row: i32) -> AgentState {
        AgentState::new(role, Cell::new(col, row), Heading::E)
    }

    fn state_on(map: &GridMap, hlp: (i32, i32), llp: (i32, i32), ev: (i32, i32), goal: (i32, i32)) -> EpisodeState {
        EpisodeState::new(
            map,
            agent(Role::Hlp, hlp.0, hlp.1),
            agent(Role::Llp, llp.0, llp.1),
            agent(Role::Evader, ev.0, ev.1),
            Cell::new(goal.0, goal.1),
            DEFAULT_HORIZON,
        )
        .unwrap()
    }

    #[test]
    fn interior_evader_has_all_actions() {
        let map = GridMap::open(5, 5);
        assert_eq!(valid_actions(&map, &agent(Role::Evader, 2, 2)), ActionSet::ALL);
    }

    #[test]
    fn corner_evader_next_to_building() {
        let map = load_map(".#.\n...\n...").unwrap();
        let actions: Vec<_> = valid_actions(&map, &agent(Role::Evader, 0, 0)).iter().collect();
        assert_eq!(actions, vec![Action::MoveS, Action::Stay]);
        let hlp: Vec<_> = valid_actions(&map, &agent(Role::Hlp, 0, 0)).iter().collect();
        assert_eq!(hlp, vec![Action::MoveS, Action::MoveE, Action::Stay]);
    }

    #[test]
    fn all_stay_advances_time_only() {
        let map = GridMap::open(10, 10);
        let s = state_on(&map, (0, 0), (0, 5), (6, 6), (9, 9));
        let n = step(&map, &s, &JointAction::STAY).unwrap();
        assert_eq!(n.t, 1);
        assert_eq!((n.hlp, n.llp, n.evader), (s.hlp, s.llp, s.evader));
        assert_eq!(n.status, Status::Running);
    }

    #[test]
    fn evader_reaching_goal_wins() {
        let map = GridMap::open(10, 10);
        let s = state_on(&map, (0, 0), (0, 0), (8, 9), (9, 9));
        let n = step(&map, &s, &JointAction::new(Action::Stay, Action::Stay, Action::MoveE)).unwrap();
        assert_eq!(n.status, Status::EvaderWin);
        assert_eq!(n.evader.heading, Heading::E);
    }

    #[test]
    fn llp_adjacent_after_move_captures() {
        let map = GridMap::open(10, 10);
        let s = state_on(&map, (0, 0), (3, 3), (5, 4), (9, 9));
        let n = step(&map, &s, &JointAction::new(Action::Stay, Action::MoveE, Action::Stay)).unwrap();
        assert_eq!(n.llp.position, Cell::new(4, 3));
        assert_eq!(n.status, Status::PursuerWin);
    }

    #[test]
    fn terminal_examples() {
        let map = GridMap::open(10, 10);
        let mut s = state_on(&map, (0, 0), (0, 0), (6, 6), (9, 9));
        s.llp.position = Cell::new(3, 3);
        s.evader.position = Cell::new(4, 4);
        s.t = 5;
        assert_eq!(check_terminal(&s, 100), Status::PursuerWin);
        s.llp.position = Cell::new(0, 0);
        s.evader.position = Cell::new(9, 9);
        assert_eq!(check_terminal(&s, 100), Status::EvaderWin);
        s.llp.position = Cell::new(8, 8);
        assert_eq!(check_terminal(&s, 100), Status::PursuerWin);
        s.evader.position = Cell::new(5, 5);
        s.llp.position = Cell::new(0, 0);
        s.t = 100;
        assert_eq!(check_terminal(&s, 100), Status::Timeout);
        s.t = 99;
        assert_eq!(check_terminal(&s, 100), Status::Running);
    }

    #[test]
    fn capture_precedence_exhaustive() {
        // Every LLP cell around a goal the evader is standing on.
        let map = GridMap::open(5, 5);
        let goal = Cell::new(2, 2);
        for col in 0..5 {
            for row in 0..5 {
                let mut s = state_on(&map, (0, 0), (0, 0), (4, 4), (2, 2));
                s.evader.position = goal;
                s.llp.position = Cell::new(col, row);
                let expected = if s.llp.position.chebyshev(goal) <= 1 { Status::PursuerWin } else { Status::EvaderWin };
                assert_eq!(check_terminal(&s, 100), expected);
            }
        }
    }

    #[test]
    fn rejects_invalid_and_finished() {
        let map = load_map("...\n.#.\n...").unwrap();
        let s = state_on(&map, (1, 1), (0, 1), (2, 2), (2, 0));
        let err = step(&map, &s, &JointAction::new(Action::Stay, Action::MoveE, Action::Stay)).unwrap_err();
        assert!(matches!(err, GameError::InvalidAction { role: Role::Llp, .. }));
        // HLP may hover over the building but not leave the map.
        assert!(step(&map, &s, &JointAction::new(Action::MoveN, Action::Stay, Action::Stay)).is_ok());
        let mut edge = s.clone();
        edge.hlp.position = Cell::new(1, 0);
        let err = step(&map, &edge, &JointAction::new(Action::MoveN, Action::Stay, Action::Stay)).unwrap_err();
        assert!(matches!(err, GameError::InvalidAction { role: Role::Hlp, .. }));
        let mut done = s.clone();
        done.status = Status::EvaderWin;
        assert_eq!(step(&map, &done, &JointAction::STAY).unwrap_err(), GameError::EpisodeFinished(Status::EvaderWin));
    }

    #[test]
    fn placement_validation() {
        let map = load_map("...\n.#.\n...").unwrap();
        let bad = EpisodeState::new(
            &map,
            agent(Role::Hlp, 1, 1),
            agent(Role::Llp, 1, 1),
            agent(Role::Evader, 2, 2),
            Cell::new(0, 0),
            100,
        );
        assert!(matches!(bad, Err(GameError::InvalidPlacement { role: Role::Llp, .. })));
        let same_goal = EpisodeState::new(
            &map,
            agent(Role::Hlp, 1, 1),
            agent(Role::Llp, 0, 0),
            agent(Role::Evader, 2, 2),
            Cell::new(2, 2),
            100,
        );
        assert!(matches!(same_goal, Err(GameError::InvalidPlacement { .. })));
    }

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GridMap {
        loop {
            let cells = (0..w * h)
                .map(|_| match rng.gen_range(0..10) {
                    0..=1 => crate::map::CellKind::Building,
                    2 => crate::map::CellKind::Foliage,
                    _ => crate::map::CellKind::Open,
                })
                .collect();
            if let Ok(m) = GridMap::new(w, h, cells) {
                return m;
            }
        }
    }

    fn pick(rng: &mut ChaCha8Rng, set: ActionSet) -> Action {
        set.nth(rng.gen_range(0..set.len())).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_rollouts_respect_invariants(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(&mut rng, 8, 8);
            let cells: Vec<Cell> = map.accessible_cells().collect();
            let c = |rng: &mut ChaCha8Rng| cells[rng.gen_range(0..cells.len())];
            let (l, e) = (c(&mut rng), c(&mut rng));
            let mut g = c(&mut rng);
            while g == e && cells.len() > 1 { g = c(&mut rng); }
            prop_assume!(g != e);
            let hlp = Cell::new(rng.gen_range(0..8), rng.gen_range(0..8));
            let mut s = EpisodeState::new(
                &map,
                AgentState::new(Role::Hlp, hlp, Heading::N),
                AgentState::new(Role::Llp, l, Heading::N),
                AgentState::new(Role::Evader, e, Heading::N),
                g,
                30,
            ).unwrap();
            while s.status == Status::Running {
                let ja = JointAction::new(
                    pick(&mut rng, valid_actions(&map, &s.hlp)),
                    pick(&mut rng, valid_actions(&map, &s.llp)),
                    pick(&mut rng, valid_actions(&map, &s.evader)),
                );
                let n = step(&map, &s, &ja).unwrap();
                // Determinism and order independence.
                prop_assert_eq!(&n, &step(&map, &s, &ja).unwrap());
                for order in [
                    [Role::Evader, Role::Llp, Role::Hlp],
                    [Role::Llp, Role::Evader, Role::Hlp],
                    [Role::Hlp, Role::Evader, Role::Llp],
                ] {
                    prop_assert_eq!(&n, &step_in_order(&map, &s, &ja, order).unwrap());
                }
                prop_assert_eq!(n.t, s.t + 1);
                prop_assert!(map.is_accessible(n.llp.position));
                prop_assert!(map.is_accessible(n.evader.position));
                prop_assert!(map.in_bounds(n.hlp.position));
                if is_capture(n.llp.position, n.evader.position) {
                    prop_assert_eq!(n.status, Status::PursuerWin);
                }
                s = n;
            }
            prop_assert!(step(&map, &s, &JointAction::STAY).is_err());
        }
    }
}
