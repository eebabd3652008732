//! Desk-scale parameterized environments.
//!
//! - `TwoArmRisk`: one decision between a safe arm and a risky arm whose cost
//!   depends on the parameter.
//! - `SlipperyChain`: a corridor to a goal with a short icy ledge beside a pit
//!   and an icy skate cell that sometimes lets the agent jump ahead.
//! - `WindyFourRooms`: four rooms joined by hallways, with wind pushing south.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::robust_mdp::{Outcome, ParamDistSpec, ParamSet, RobustMdp, RobustMdpParts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    TwoArmRisk,
    SlipperyChain,
    WindyFourRooms,
}

/// Which default parameter distribution to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Disc,
    Cont,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: EnvName,
    #[serde(default)]
    pub variant: Variant,
    /// Overrides the variant's default parameter distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_dist: Option<ParamDistSpec>,
    /// Chain length or grid side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
}

impl EnvSpec {
    pub fn new(name: EnvName) -> Self {
        Self {
            name,
            variant: Variant::Disc,
            param_dist: None,
            size: None,
            horizon: None,
            discount: None,
        }
    }

    pub fn two_arm_risk() -> Self {
        Self::new(EnvName::TwoArmRisk)
    }

    pub fn slippery_chain(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::new(EnvName::SlipperyChain)
        }
    }

    pub fn windy_four_rooms(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::new(EnvName::WindyFourRooms)
        }
    }

    /// The spec with every default written out.
    pub fn resolved(&self) -> EnvSpec {
        let size = match self.name {
            EnvName::TwoArmRisk => None,
            EnvName::SlipperyChain => Some(self.size.unwrap_or(6)),
            EnvName::WindyFourRooms => Some(self.size.unwrap_or(11)),
        };
        let horizon = match self.name {
            EnvName::TwoArmRisk => 1,
            EnvName::SlipperyChain => 12,
            EnvName::WindyFourRooms => 6 * size.unwrap_or_default(),
        };
        EnvSpec {
            name: self.name,
            variant: self.variant,
            param_dist: Some(self.resolved_param_dist()),
            size,
            horizon: Some(self.horizon.unwrap_or(horizon)),
            discount: Some(self.discount.unwrap_or(1.0)),
        }
    }

    /// First 16 hex digits of the SHA-256 of the resolved spec's JSON.
    ///
    /// Golden values and saved runs carry this so a change to an environment
    /// is noticed rather than silently compared against stale numbers.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_string(&self.resolved()).expect("env specs always serialize");
        Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The parameter distribution this spec realizes.
    pub fn resolved_param_dist(&self) -> ParamDistSpec {
        if let Some(d) = &self.param_dist {
            return d.clone();
        }
        match (self.name, self.variant) {
            (EnvName::TwoArmRisk, _) => ParamDistSpec::Discrete {
                values: vec![TWO_ARM_BENIGN, TWO_ARM_ADVERSE],
                probs: vec![0.9, 0.1],
            },
            (_, Variant::Disc) => ParamDistSpec::Discrete {
                values: vec![0.05, 0.4],
                probs: vec![0.9, 0.1],
            },
            (_, Variant::Cont) => ParamDistSpec::TruncatedGaussian {
                mean: 0.1,
                std: 0.1,
                low: 0.0,
                high: 0.4,
                grid_n: 9,
            },
        }
    }
}

pub fn make_env(spec: &EnvSpec) -> Result<RobustMdp> {
    if spec.name == EnvName::TwoArmRisk && spec.size.is_some() {
        return Err(Error::InvalidModel("two_arm_risk takes no size".into()));
    }
    let spec = spec.resolved();
    let params = spec.resolved_param_dist().realize()?;
    let (horizon, discount) = (spec.horizon.unwrap_or_default(), spec.discount.unwrap_or_default());
    match spec.name {
        EnvName::TwoArmRisk => two_arm_risk(params, horizon, discount),
        EnvName::SlipperyChain => slippery_chain(spec.size.unwrap_or_default(), params, horizon, discount),
        EnvName::WindyFourRooms => windy_four_rooms(spec.size.unwrap_or_default(), params, horizon, discount),
    }
}

pub const TWO_ARM_BENIGN: f64 = 0.0;
pub const TWO_ARM_ADVERSE: f64 = 1.0;
pub const SAFE: usize = 0;
pub const RISKY: usize = 1;

/// Risky-arm cost at adversity level `x`: `−2` when benign (`x = 0`), `+10` when adverse (`x = 1`).
pub fn risky_cost(x: f64) -> f64 {
    -2.0 + 12.0 * x
}

/// State 0 decides; state 1 is terminal.
pub fn two_arm_risk(params: ParamSet, horizon: usize, discount: f64) -> Result<RobustMdp> {
    let safe: Vec<Vec<Outcome>> = params.values().iter().map(|_| vec![Outcome::new(1, 0.0, 1.0)]).collect();
    let risky: Vec<Vec<Outcome>> = params
        .values()
        .iter()
        .map(|&x| vec![Outcome::new(1, risky_cost(x), 1.0)])
        .collect();
    let cost_bound = params.values().iter().map(|&x| risky_cost(x).abs()).fold(0.0, f64::max);
    RobustMdp::new(RobustMdpParts {
        n_states: 2,
        n_actions: 2,
        params: vec![params, ParamSet::point(0.0)],
        kernel: vec![vec![safe, risky], vec![]],
        initial: vec![1.0, 0.0],
        terminal: vec![false, true],
        discount,
        horizon,
        cost_bound,
        state_names: Some(vec!["decide".into(), "end".into()]),
    })
}

pub const RIGHT: usize = 0;
pub const LEFT: usize = 1;
pub const PIT_COST: f64 = 20.0;

/// State layout of [`slippery_chain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainLayout {
    pub n: usize,
}

impl ChainLayout {
    pub fn cell(&self, i: usize) -> usize {
        i
    }
    pub fn ledge(&self) -> usize {
        self.n
    }
    pub fn goal(&self) -> usize {
        self.n + 1
    }
    pub fn pit(&self) -> usize {
        self.n + 2
    }
    pub fn skate_cell(&self) -> usize {
        1
    }
    /// Extra cells gained by a successful skate.
    pub fn skate_gain(&self) -> usize {
        2.min(self.n - 3)
    }
    pub fn n_states(&self) -> usize {
        self.n + 3
    }
}

/// Corridor cells `0..n`; `right` moves one cell on (cost 1), and `right` from
/// the last cell enters the goal (cost 0), so walking the corridor costs `n − 1`.
///
/// `left` from cell 0 steps onto the ledge (cost 1); any action on the ledge
/// reaches the goal (cost 0) with probability `1 − p` and falls into the pit
/// (cost 20) with probability `p`. `left` from the skate cell (cell 1) jumps
/// ahead with probability `1 − p/p_max` and otherwise advances one cell, in
/// both cases at cost 1. `left` elsewhere steps back one cell. Only the
/// ledge and the skate cell carry the slip parameter `p`.
pub fn slippery_chain(n: usize, params: ParamSet, horizon: usize, discount: f64) -> Result<RobustMdp> {
    if n < 3 {
        return Err(Error::InvalidModel(format!("slippery chain needs n >= 3, got {n}")));
    }
    if params.values().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidModel("slip probabilities must lie in [0, 1]".into()));
    }
    let lay = ChainLayout { n };
    let p_max = params.values().iter().copied().fold(0.0, f64::max);
    let point = ParamSet::point(0.0);
    let mut all_params = Vec::with_capacity(lay.n_states());
    let mut kernel = Vec::with_capacity(lay.n_states());
    let right_of = |i: usize| -> Outcome {
        if i + 1 == n {
            Outcome::new(lay.goal(), 0.0, 1.0)
        } else {
            Outcome::new(lay.cell(i + 1), 1.0, 1.0)
        }
    };
    for i in 0..n {
        if i == lay.skate_cell() {
            let rows_right = params.values().iter().map(|_| vec![right_of(i)]).collect();
            let rows_left = params
                .values()
                .iter()
                .map(|&p| {
                    let success = if p_max > 0.0 { 1.0 - p / p_max } else { 1.0 };
                    let jump = Outcome::new(lay.cell(i + 1 + lay.skate_gain()), 1.0, success);
                    let fail = Outcome::new(lay.cell(i + 1), 1.0, 1.0 - success);
                    merge_outcomes(vec![jump, fail])
                })
                .collect();
            all_params.push(params.clone());
            kernel.push(vec![rows_right, rows_left]);
        } else {
            let left = if i == 0 {
                Outcome::new(lay.ledge(), 1.0, 1.0)
            } else {
                Outcome::new(lay.cell(i - 1), 1.0, 1.0)
            };
            all_params.push(point.clone());
            kernel.push(vec![vec![vec![right_of(i)]], vec![vec![left]]]);
        }
    }
    let ledge_rows: Vec<Vec<Outcome>> = params
        .values()
        .iter()
        .map(|&p| merge_outcomes(vec![Outcome::new(lay.goal(), 0.0, 1.0 - p), Outcome::new(lay.pit(), PIT_COST, p)]))
        .collect();
    all_params.push(params.clone());
    kernel.push(vec![ledge_rows.clone(), ledge_rows]);
    all_params.push(point.clone());
    kernel.push(vec![]);
    all_params.push(point);
    kernel.push(vec![]);
    let mut initial = vec![0.0; lay.n_states()];
    initial[0] = 1.0;
    let mut terminal = vec![false; lay.n_states()];
    terminal[lay.goal()] = true;
    terminal[lay.pit()] = true;
    let mut names: Vec<String> = (0..n).map(|i| format!("cell{i}")).collect();
    names.extend(["ledge".into(), "goal".into(), "pit".into()]);
    RobustMdp::new(RobustMdpParts {
        n_states: lay.n_states(),
        n_actions: 2,
        params: all_params,
        kernel,
        initial,
        terminal,
        discount,
        horizon,
        cost_bound: PIT_COST,
        state_names: Some(names),
    })
}

/// Drops zero-probability atoms, keeping at least one.
fn merge_outcomes(outcomes: Vec<Outcome>) -> Vec<Outcome> {
    let kept: Vec<Outcome> = outcomes.iter().copied().filter(|o| o.prob > 0.0).collect();
    if kept.is_empty() {
        outcomes[..1].to_vec()
    } else {
        kept
    }
}

pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;

/// Cell geometry of [`windy_four_rooms`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoomsLayout {
    pub size: usize,
    /// `index[r][c]` for open cells.
    pub index: Vec<Vec<Option<usize>>>,
    pub cells: Vec<(usize, usize)>,
}

impl RoomsLayout {
    pub fn new(size: usize) -> Self {
        let mid = size / 2;
        let (h1, h2) = (mid / 2, mid + 1 + (size - mid - 1) / 2);
        let wall = |r: usize, c: usize| (c == mid && r != h1 && r != h2) || (r == mid && c != h1 && c != h2) || (r == mid && c == mid);
        let mut index = vec![vec![None; size]; size];
        let mut cells = Vec::new();
        for r in 0..size {
            for c in 0..size {
                if !wall(r, c) {
                    index[r][c] = Some(cells.len());
                    cells.push((r, c));
                }
            }
        }
        Self { size, index, cells }
    }

    pub fn start(&self) -> usize {
        self.index[0][0].expect("corner is open")
    }

    pub fn goal(&self) -> usize {
        self.index[self.size - 1][self.size - 1].expect("corner is open")
    }

    /// Cell reached by moving `dir` from `cell`; blocked moves stay put.
    pub fn moved(&self, cell: usize, dir: usize) -> usize {
        let (r, c) = self.cells[cell];
        let (dr, dc): (isize, isize) = match dir {
            NORTH => (-1, 0),
            SOUTH => (1, 0),
            EAST => (0, 1),
            _ => (0, -1),
        };
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.size as isize || nc >= self.size as isize {
            return cell;
        }
        self.index[nr as usize][nc as usize].unwrap_or(cell)
    }
}

/// Four rooms on a `size × size` grid. Each move goes in the chosen direction
/// with probability `1 − w` and is blown south with probability `w`. Moves cost
/// 1 except the one entering the goal, which costs 0.
pub fn windy_four_rooms(size: usize, params: ParamSet, horizon: usize, discount: f64) -> Result<RobustMdp> {
    if size < 5 {
        return Err(Error::InvalidModel(format!("four rooms needs size >= 5, got {size}")));
    }
    if params.values().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidModel("wind probabilities must lie in [0, 1]".into()));
    }
    let lay = RoomsLayout::new(size);
    let n = lay.cells.len();
    let goal = lay.goal();
    let outcome_to = |cell: usize, prob: f64| Outcome::new(cell, if cell == goal { 0.0 } else { 1.0 }, prob);
    let mut all_params = Vec::with_capacity(n);
    let mut kernel = Vec::with_capacity(n);
    for cell in 0..n {
        if cell == goal {
            all_params.push(ParamSet::point(0.0));
            kernel.push(vec![]);
            continue;
        }
        let mut per_action = Vec::with_capacity(4);
        for dir in [NORTH, SOUTH, EAST, WEST] {
            let intended = lay.moved(cell, dir);
            let blown = lay.moved(cell, SOUTH);
            let rows = params
                .values()
                .iter()
                .map(|&w| {
                    if intended == blown {
                        vec![outcome_to(intended, 1.0)]
                    } else {
                        merge_outcomes(vec![outcome_to(intended, 1.0 - w), outcome_to(blown, w)])
                    }
                })
                .collect();
            per_action.push(rows);
        }
        all_params.push(params.clone());
        kernel.push(per_action);
    }
    let mut initial = vec![0.0; n];
    initial[lay.start()] = 1.0;
    let mut terminal = vec![false; n];
    terminal[goal] = true;
    let names = lay.cells.iter().map(|(r, c)| format!("r{r}c{c}")).collect();
    RobustMdp::new(RobustMdpParts {
        n_states: n,
        n_actions: 4,
        params: all_params,
        kernel,
        initial,
        terminal,
        discount,
        horizon,
        cost_bound: 1.0,
        state_names: Some(names),
    })
}
