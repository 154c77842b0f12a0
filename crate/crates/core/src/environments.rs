//! Cart Pole and Door Key.
//!
//! Both domains are deterministic given the reset seed. Stepping returns a
//! [`StepResult`] that carries the built-in reward; learners only ever see
//! the reward-free [`AgentStep`] projection of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::VecDeque;
use std::fmt;
use std::ops::Deref;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("episode is over; reset before stepping")]
    EpisodeOver,
    #[error("action {action} out of range for {actions} actions")]
    InvalidAction { action: usize, actions: usize },
    #[error("invalid door key layout: {0}")]
    InvalidLayout(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    CartPole,
    DoorKey,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::CartPole => "cart_pole",
            Domain::DoorKey => "door_key",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cart_pole" | "cartpole" => Ok(Domain::CartPole),
            "door_key" | "doorkey" => Ok(Domain::DoorKey),
            other => Err(format!("unknown domain `{other}` (expected cart_pole or door_key)")),
        }
    }
}

/// Feature vector handed to agents, teachers and classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Full step outcome. Only the evaluation harness reads `reward`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// What a learner is allowed to see after a step.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStep {
    pub observation: Observation,
    pub done: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }

    pub fn agent_view(&self) -> AgentStep {
        AgentStep {
            observation: self.observation.clone(),
            done: self.done(),
        }
    }
}

// ---------------------------------------------------------------------------
// Cart Pole
// ---------------------------------------------------------------------------

pub const CARTPOLE_GRAVITY: f64 = 9.8;
pub const CARTPOLE_CART_MASS: f64 = 1.0;
pub const CARTPOLE_POLE_MASS: f64 = 0.1;
pub const CARTPOLE_HALF_LENGTH: f64 = 0.5;
pub const CARTPOLE_FORCE: f64 = 10.0;
pub const CARTPOLE_TAU: f64 = 0.02;
pub const CARTPOLE_X_LIMIT: f64 = 2.4;
pub const CARTPOLE_THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const CARTPOLE_MAX_STEPS: u32 = 1000;

pub const CARTPOLE_LEFT: usize = 0;
pub const CARTPOLE_RIGHT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub t: u32,
}

impl CartPoleState {
    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            theta,
            theta_dot,
            t: 0,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.x.abs() > CARTPOLE_X_LIMIT || self.theta.abs() > CARTPOLE_THETA_LIMIT
    }

    pub fn encode(&self) -> Observation {
        Observation(vec![self.x, self.x_dot, self.theta, self.theta_dot])
    }

    pub fn decode(obs: &[f64]) -> Option<Self> {
        match obs {
            [x, x_dot, theta, theta_dot] => Some(Self::new(*x, *x_dot, *theta, *theta_dot)),
            _ => None,
        }
    }
}

/// One explicit Euler step of the classic cart-pole equations.
pub fn cartpole_dynamics(s: &CartPoleState, force: f64) -> CartPoleState {
    let total_mass = CARTPOLE_CART_MASS + CARTPOLE_POLE_MASS;
    let pole_mass_length = CARTPOLE_POLE_MASS * CARTPOLE_HALF_LENGTH;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + pole_mass_length * s.theta_dot * s.theta_dot * sin) / total_mass;
    let theta_acc = (CARTPOLE_GRAVITY * sin - cos * temp)
        / (CARTPOLE_HALF_LENGTH * (4.0 / 3.0 - CARTPOLE_POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
    CartPoleState {
        x: s.x + CARTPOLE_TAU * s.x_dot,
        x_dot: s.x_dot + CARTPOLE_TAU * x_acc,
        theta: s.theta + CARTPOLE_TAU * s.theta_dot,
        theta_dot: s.theta_dot + CARTPOLE_TAU * theta_acc,
        t: s.t + 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CartPole {
    state: CartPoleState,
    done: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            state: CartPoleState::default(),
            done: true,
        }
    }

    /// Starts an episode from an explicit state.
    pub fn from_state(state: CartPoleState) -> Self {
        Self {
            done: state.is_failed() || state.t >= CARTPOLE_MAX_STEPS,
            state,
        }
    }

    pub fn state(&self) -> &CartPoleState {
        &self.state
    }

    pub fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.gen_range(-0.05..=0.05);
        self.state = CartPoleState::new(draw(), draw(), draw(), draw());
        self.done = false;
        StepResult {
            observation: self.state.encode(),
            reward: 0.0,
            terminated: false,
            truncated: false,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let force = match action {
            CARTPOLE_LEFT => -CARTPOLE_FORCE,
            CARTPOLE_RIGHT => CARTPOLE_FORCE,
            _ => return Err(EnvError::InvalidAction { action, actions: 2 }),
        };
        self.state = cartpole_dynamics(&self.state, force);
        let terminated = self.state.is_failed();
        let truncated = self.state.t >= CARTPOLE_MAX_STEPS;
        self.done = terminated || truncated;
        Ok(StepResult {
            observation: self.state.encode(),
            reward: 1.0,
            terminated,
            truncated,
        })
    }

    pub fn render(&self) -> serde_json::Value {
        json!({
            "domain": "cart_pole",
            "x": self.state.x,
            "x_dot": self.state.x_dot,
            "theta": self.state.theta,
            "theta_dot": self.state.theta_dot,
            "t": self.state.t,
        })
    }
}

// ---------------------------------------------------------------------------
// Door Key
// ---------------------------------------------------------------------------

pub const DOORKEY_TURN_LEFT: usize = 0;
pub const DOORKEY_TURN_RIGHT: usize = 1;
pub const DOORKEY_FORWARD: usize = 2;
pub const DOORKEY_PICKUP: usize = 3;
pub const DOORKEY_TOGGLE: usize = 4;
pub const DOORKEY_ACTIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    East,
    South,
    West,
    North,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::East, Heading::South, Heading::West, Heading::North];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn right(self) -> Self {
        Self::ALL[(self.index() + 1) % 4]
    }

    pub fn left(self) -> Self {
        Self::ALL[(self.index() + 3) % 4]
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
            Heading::North => (0, -1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Empty,
    Wall,
    Door,
    Key,
    Goal,
}

/// Fixed map: an interior of `width x height` cells split by a wall column
/// with a single door, a key on the start side and the goal on the far side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorKeyLayout {
    pub width: usize,
    pub height: usize,
    pub wall_col: usize,
    pub door_row: usize,
    pub key: Pos,
    pub goal: Pos,
    pub start: Pos,
    pub start_heading: Heading,
    pub max_steps: u32,
}

impl Default for DoorKeyLayout {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            wall_col: 2,
            door_row: 3,
            key: Pos::new(0, 3),
            goal: Pos::new(4, 4),
            start: Pos::new(0, 0),
            start_heading: Heading::East,
            max_steps: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DoorKeyState {
    pub pos: Pos,
    pub heading: Heading,
    pub has_key: bool,
    pub door_open: bool,
    pub t: u32,
}

impl DoorKeyState {
    /// The state with the step counter cleared, for planning and hashing.
    pub fn pose(&self) -> DoorKeyState {
        DoorKeyState { t: 0, ..*self }
    }
}

impl DoorKeyLayout {
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: &str| Err(EnvError::InvalidLayout(m.to_string()));
        if self.width < 3 || self.height < 1 {
            return fail("grid must be at least 3 wide");
        }
        if self.wall_col == 0 || self.wall_col + 1 >= self.width || self.door_row >= self.height {
            return fail("wall column must be interior and door row inside the grid");
        }
        for p in [self.key, self.goal, self.start] {
            if p.x >= self.width || p.y >= self.height || p.x == self.wall_col {
                return fail("key, goal and start must be free interior cells");
            }
        }
        if self.key.x > self.wall_col || self.start.x > self.wall_col || self.goal.x < self.wall_col {
            return fail("key and start must lie left of the wall, goal right of it");
        }
        if self.key == self.start || self.max_steps == 0 {
            return fail("key must not coincide with start; max_steps must be positive");
        }
        Ok(())
    }

    pub fn door(&self) -> Pos {
        Pos::new(self.wall_col, self.door_row)
    }

    pub fn obs_dim(&self) -> usize {
        self.width * self.height + 4 + 2
    }

    pub fn initial_state(&self) -> DoorKeyState {
        DoorKeyState {
            pos: self.start,
            heading: self.start_heading,
            has_key: false,
            door_open: false,
            t: 0,
        }
    }

    /// Static cell contents given the dynamic door/key flags.
    pub fn cell(&self, p: Pos, has_key: bool) -> Cell {
        if p.x == self.wall_col {
            if p.y == self.door_row {
                Cell::Door
            } else {
                Cell::Wall
            }
        } else if p == self.key && !has_key {
            Cell::Key
        } else if p == self.goal {
            Cell::Goal
        } else {
            Cell::Empty
        }
    }

    pub fn ahead(&self, s: &DoorKeyState) -> Option<Pos> {
        let (dx, dy) = s.heading.delta();
        let x = s.pos.x as i64 + dx;
        let y = s.pos.y as i64 + dy;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(Pos::new(x as usize, y as usize))
        }
    }

    /// Pure transition: returns the successor (with `t + 1`) and whether it
    /// reached the goal.
    pub fn transition(&self, s: &DoorKeyState, action: usize) -> Result<(DoorKeyState, bool), EnvError> {
        let mut next = DoorKeyState { t: s.t + 1, ..*s };
        let ahead = self.ahead(s);
        match action {
            DOORKEY_TURN_LEFT => next.heading = s.heading.left(),
            DOORKEY_TURN_RIGHT => next.heading = s.heading.right(),
            DOORKEY_FORWARD => {
                if let Some(p) = ahead {
                    let passable = match self.cell(p, s.has_key) {
                        Cell::Empty | Cell::Goal => true,
                        Cell::Door => s.door_open,
                        Cell::Wall | Cell::Key => false,
                    };
                    if passable {
                        next.pos = p;
                    }
                }
            }
            DOORKEY_PICKUP => {
                if ahead.is_some_and(|p| self.cell(p, s.has_key) == Cell::Key) {
                    next.has_key = true;
                }
            }
            DOORKEY_TOGGLE => {
                if s.has_key && ahead == Some(self.door()) {
                    next.door_open = true;
                }
            }
            _ => {
                return Err(EnvError::InvalidAction {
                    action,
                    actions: DOORKEY_ACTIONS,
                })
            }
        }
        let at_goal = next.pos == self.goal;
        Ok((next, at_goal))
    }

    /// One-hot position, one-hot heading, key bit, door bit.
    pub fn encode(&self, s: &DoorKeyState) -> Observation {
        let mut v = vec![0.0; self.obs_dim()];
        let cells = self.width * self.height;
        v[s.pos.y * self.width + s.pos.x] = 1.0;
        v[cells + s.heading.index()] = 1.0;
        v[cells + 4] = s.has_key as u8 as f64;
        v[cells + 5] = s.door_open as u8 as f64;
        Observation(v)
    }

    /// Inverse of [`DoorKeyLayout::encode`] (step counter set to 0).
    pub fn decode(&self, obs: &[f64]) -> Option<DoorKeyState> {
        if obs.len() != self.obs_dim() {
            return None;
        }
        let cells = self.width * self.height;
        let argmax = |s: &[f64]| {
            s.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0
        };
        let cell = argmax(&obs[..cells]);
        let heading = Heading::ALL[argmax(&obs[cells..cells + 4])];
        Some(DoorKeyState {
            pos: Pos::new(cell % self.width, cell / self.width),
            heading,
            has_key: obs[cells + 4] > 0.5,
            door_open: obs[cells + 5] > 0.5,
            t: 0,
        })
    }

    fn state_index(&self, s: &DoorKeyState) -> usize {
        (((s.pos.y * self.width + s.pos.x) * 4 + s.heading.index()) * 2 + s.has_key as usize) * 2
            + s.door_open as usize
    }

    fn all_poses(&self) -> impl Iterator<Item = DoorKeyState> + '_ {
        let n = self.width * self.height * 16;
        (0..n).map(move |i| DoorKeyState {
            pos: Pos::new((i / 16) % self.width, (i / 16) / self.width),
            heading: Heading::ALL[(i / 4) % 4],
            has_key: (i / 2) % 2 == 1,
            door_open: i % 2 == 1,
            t: 0,
        })
    }

    /// States reachable from the start pose, in breadth-first order.
    pub fn reachable_states(&self) -> Vec<DoorKeyState> {
        let start = self.initial_state();
        let mut seen = vec![false; self.width * self.height * 16];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[self.state_index(&start)] = true;
        while let Some(s) = queue.pop_front() {
            order.push(s);
            if s.pos == self.goal {
                continue;
            }
            for a in 0..DOORKEY_ACTIONS {
                let (next, _) = self.transition(&s, a).expect("valid action");
                let next = next.pose();
                let idx = self.state_index(&next);
                if !seen[idx] {
                    seen[idx] = true;
                    queue.push_back(next);
                }
            }
        }
        order
    }
}

/// Shortest-path distances to the goal for every pose of a layout.
#[derive(Clone, Debug)]
pub struct DoorKeyPlanner {
    layout: DoorKeyLayout,
    dist: Vec<u32>,
}

impl DoorKeyPlanner {
    pub fn new(layout: DoorKeyLayout) -> Self {
        let n = layout.width * layout.height * 16;
        let mut dist = vec![u32::MAX; n];
        let poses: Vec<_> = layout.all_poses().collect();
        for s in &poses {
            if s.pos == layout.goal {
                dist[layout.state_index(s)] = 0;
            }
        }
        // Unit-cost Bellman relaxation; converges within |S| sweeps.
        loop {
            let mut changed = false;
            for s in &poses {
                let idx = layout.state_index(s);
                if s.pos == layout.goal {
                    continue;
                }
                let best = (0..DOORKEY_ACTIONS)
                    .map(|a| {
                        let (next, _) = layout.transition(s, a).expect("valid action");
                        dist[layout.state_index(&next.pose())]
                    })
                    .min()
                    .unwrap_or(u32::MAX);
                if best != u32::MAX && best + 1 < dist[idx] {
                    dist[idx] = best + 1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Self { layout, dist }
    }

    pub fn layout(&self) -> &DoorKeyLayout {
        &self.layout
    }

    /// Steps to the goal, or `None` if unreachable.
    pub fn distance(&self, s: &DoorKeyState) -> Option<u32> {
        let d = self.dist[self.layout.state_index(&s.pose())];
        (d != u32::MAX).then_some(d)
    }

    /// First action of a shortest plan; ties go to the lowest action index.
    pub fn best_action(&self, s: &DoorKeyState) -> usize {
        (0..DOORKEY_ACTIONS)
            .min_by_key(|&a| {
                let (next, _) = self.layout.transition(s, a).expect("valid action");
                self.dist[self.layout.state_index(&next.pose())]
            })
            .expect("non-empty action set")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoorKey {
    layout: DoorKeyLayout,
    state: DoorKeyState,
    done: bool,
}

impl DoorKey {
    pub fn new(layout: DoorKeyLayout) -> Result<Self, EnvError> {
        layout.validate()?;
        let state = layout.initial_state();
        Ok(Self {
            layout,
            state,
            done: true,
        })
    }

    pub fn layout(&self) -> &DoorKeyLayout {
        &self.layout
    }

    pub fn state(&self) -> &DoorKeyState {
        &self.state
    }

    /// The layout is fixed, so the seed does not influence the start state.
    pub fn reset(&mut self, _seed: u64) -> StepResult {
        self.state = self.layout.initial_state();
        self.done = false;
        StepResult {
            observation: self.layout.encode(&self.state),
            reward: 0.0,
            terminated: false,
            truncated: false,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let (next, terminated) = self.layout.transition(&self.state, action)?;
        self.state = next;
        let truncated = !terminated && next.t >= self.layout.max_steps;
        self.done = terminated || truncated;
        let reward = if terminated {
            1.0 - 0.9 * (next.t as f64 / self.layout.max_steps as f64)
        } else {
            0.0
        };
        Ok(StepResult {
            observation: self.layout.encode(&self.state),
            reward,
            terminated,
            truncated,
        })
    }

    pub fn render(&self) -> serde_json::Value {
        let grid: Vec<Vec<Cell>> = (0..self.layout.height)
            .map(|y| {
                (0..self.layout.width)
                    .map(|x| self.layout.cell(Pos::new(x, y), self.state.has_key))
                    .collect()
            })
            .collect();
        json!({
            "domain": "door_key",
            "width": self.layout.width,
            "height": self.layout.height,
            "cells": grid,
            "agent": { "x": self.state.pos.x, "y": self.state.pos.y, "heading": self.state.heading },
            "has_key": self.state.has_key,
            "door_open": self.state.door_open,
            "t": self.state.t,
        })
    }
}

/// Either benchmark domain behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    CartPole(CartPole),
    DoorKey(DoorKey),
}

impl Env {
    pub fn new(domain: Domain) -> Self {
        match domain {
            Domain::CartPole => Env::CartPole(CartPole::new()),
            Domain::DoorKey => {
                Env::DoorKey(DoorKey::new(DoorKeyLayout::default()).expect("default layout is valid"))
            }
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            Env::CartPole(_) => Domain::CartPole,
            Env::DoorKey(_) => Domain::DoorKey,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Env::CartPole(_) => 2,
            Env::DoorKey(_) => DOORKEY_ACTIONS,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Env::CartPole(_) => 4,
            Env::DoorKey(d) => d.layout.obs_dim(),
        }
    }

    pub fn reset(&mut self, seed: u64) -> StepResult {
        match self {
            Env::CartPole(e) => e.reset(seed),
            Env::DoorKey(e) => e.reset(seed),
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        match self {
            Env::CartPole(e) => e.step(action),
            Env::DoorKey(e) => e.step(action),
        }
    }

    pub fn observation(&self) -> Observation {
        match self {
            Env::CartPole(e) => e.state.encode(),
            Env::DoorKey(e) => e.layout.encode(&e.state),
        }
    }

    pub fn render(&self) -> serde_json::Value {
        match self {
            Env::CartPole(e) => e.render(),
            Env::DoorKey(e) => e.render(),
        }
    }

    pub fn action_name(&self, action: usize) -> &'static str {
        match (self, action) {
            (Env::CartPole(_), CARTPOLE_LEFT) => "left",
            (Env::CartPole(_), CARTPOLE_RIGHT) => "right",
            (Env::DoorKey(_), DOORKEY_TURN_LEFT) => "turn_left",
            (Env::DoorKey(_), DOORKEY_TURN_RIGHT) => "turn_right",
            (Env::DoorKey(_), DOORKEY_FORWARD) => "forward",
            (Env::DoorKey(_), DOORKEY_PICKUP) => "pickup",
            (Env::DoorKey(_), DOORKEY_TOGGLE) => "toggle",
            _ => "invalid",
        }
    }
}
