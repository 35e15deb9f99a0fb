//! Grid domains with hidden NSE severity functions.
//!
//! Severity is a property of where an action is aimed: the label of `(s, a)`
//! is a function of the features of the intended destination of `a` from `s`
//! (and of the action itself). [`FeatureMap::pair_features`] exposes exactly
//! that portion, which is what the severity classifier trains on, while
//! [`FeatureMap::state_features`] are the per-state features used for
//! clustering.
//!
//! Map legend: `.` free, `G` grass, `P` grass with puddle, `V` vase,
//! `C` carpet, `W` vase on carpet, `H` hazard, `S` start, `*` goal.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::mdp::{StateRecord, TabularMdp, Transition};
use crate::{Error, Result, SeverityLabel, TrueNseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Navigation,
    Vase,
    Push,
    Freeway,
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainKind::Navigation => "navigation",
            DomainKind::Vase => "vase",
            DomainKind::Push => "push",
            DomainKind::Freeway => "freeway",
        })
    }
}

impl std::str::FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "navigation" => Ok(DomainKind::Navigation),
            "vase" => Ok(DomainKind::Vase),
            "push" => Ok(DomainKind::Push),
            "freeway" => Ok(DomainKind::Freeway),
            other => Err(Error::InvalidDomain(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lane {
    /// Car column at tick 0.
    pub start: i32,
    /// Columns per tick; negative moves left.
    pub speed: i32,
}

fn default_slip() -> f64 {
    1.0
}

fn default_window() -> usize {
    2
}

/// Declarative description of one domain instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: DomainKind,
    /// ASCII map for the grid domains.
    #[serde(default)]
    pub map: Option<String>,
    /// Probability that a move succeeds; on failure the agent stays put.
    #[serde(default = "default_slip")]
    pub slip: f64,
    /// Assert at build time that every start-to-goal path incurs an NSE.
    #[serde(default)]
    pub unavoidable: bool,
    /// Box position `[x, y]` for push.
    #[serde(default, rename = "box")]
    pub box_position: Option<[i32; 2]>,
    /// Freeway: number of columns (also the traffic period).
    #[serde(default)]
    pub columns: Option<usize>,
    /// Freeway: the chicken's fixed column.
    #[serde(default)]
    pub chicken_column: Option<i32>,
    /// Freeway: car features cover columns within this distance of the chicken.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub lanes: Vec<Lane>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub grass: bool,
    pub puddle: bool,
    pub vase: bool,
    pub carpet: bool,
    pub hazard: bool,
}

impl Cell {
    fn glyph(c: char) -> Option<Self> {
        let mut cell = Cell::default();
        match c {
            '.' | 'S' | '*' => {}
            'G' => cell.grass = true,
            'P' => {
                cell.grass = true;
                cell.puddle = true;
            }
            'V' => cell.vase = true,
            'C' => cell.carpet = true,
            'W' => {
                cell.vase = true;
                cell.carpet = true;
            }
            'H' => cell.hazard = true,
            _ => return None,
        }
        Some(cell)
    }

    pub fn kind(&self) -> &'static str {
        match (self.grass, self.puddle, self.vase, self.carpet, self.hazard) {
            (true, true, ..) => "puddle",
            (true, false, ..) => "grass",
            (_, _, true, true, _) => "vase_on_carpet",
            (_, _, true, false, _) => "vase",
            (_, _, false, true, _) => "carpet",
            (.., true) => "hazard",
            _ => "plain",
        }
    }
}

/// A parsed ASCII map. Row 0 is the top line; positions are `(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Cell>,
    pub glyphs: Vec<char>,
    pub start: (i32, i32),
    pub goal: (i32, i32),
}

impl GridMap {
    pub fn cell(&self, x: i32, y: i32) -> Cell {
        self.cells[y as usize * self.width + x as usize]
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    fn index(&self, x: i32, y: i32) -> usize {
        y as usize * self.width + x as usize
    }
}

/// Parses a map line by line. A single trailing newline is allowed; every
/// other character must come from the legend.
pub fn parse_map(text: &str) -> Result<GridMap> {
    let text = text.strip_suffix('\n').unwrap_or(text);
    let mut width = None;
    let mut cells = Vec::new();
    let mut glyphs = Vec::new();
    let (mut start, mut goal) = (Vec::new(), Vec::new());
    let lines: Vec<&str> = text.split('\n').collect();
    for (row, line) in lines.iter().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        for (col, &c) in chars.iter().enumerate() {
            let cell = Cell::glyph(c).ok_or(Error::UnknownGlyph { row, col, glyph: c })?;
            match c {
                'S' => start.push((col as i32, row as i32)),
                '*' => goal.push((col as i32, row as i32)),
                _ => {}
            }
            cells.push(cell);
            glyphs.push(c);
        }
        match width {
            None => width = Some(chars.len()),
            Some(w) if w != chars.len() => {
                return Err(Error::InvalidDomain(format!(
                    "map row {row} has width {}, expected {w}",
                    chars.len()
                )))
            }
            _ => {}
        }
    }
    let width = width.unwrap_or(0);
    if width == 0 {
        return Err(Error::InvalidDomain("empty map".into()));
    }
    if start.len() != 1 || goal.len() != 1 {
        return Err(Error::InvalidDomain(format!(
            "map needs exactly one `S` and one `*`, found {} and {}",
            start.len(),
            goal.len()
        )));
    }
    Ok(GridMap {
        width,
        height: lines.len(),
        cells,
        glyphs,
        start: start[0],
        goal: goal[0],
    })
}

/// Per-state and per-pair feature views of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub names: Vec<String>,
    state_features: Vec<Vec<u8>>,
    /// Intended (slip-free) destination of every `(state, action)`.
    intended: Vec<Vec<usize>>,
    positions: Vec<(i32, i32)>,
}

impl FeatureMap {
    fn new(names: &[&str], mdp: &TabularMdp, intended: Vec<Vec<usize>>) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            state_features: mdp.states().iter().map(|r| r.features.clone()).collect(),
            intended,
            positions: mdp.states().iter().map(|r| r.position()).collect(),
        }
    }

    pub fn state_features(&self, s: usize) -> &[u8] {
        &self.state_features[s]
    }

    /// Features of the state that `a` is aimed at from `s`.
    pub fn pair_features(&self, s: usize, a: usize) -> &[u8] {
        &self.state_features[self.intended[s][a]]
    }

    pub fn intended(&self, s: usize, a: usize) -> usize {
        self.intended[s][a]
    }

    /// Grid position the action is aimed at; what a gaze should land on.
    pub fn outcome_position(&self, s: usize, a: usize) -> (i32, i32) {
        self.positions[self.intended[s][a]]
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub x: i32,
    pub y: i32,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub x: i32,
    pub y: i32,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Extra {
    Grid,
    Push { box_cell: (i32, i32) },
    Freeway { lanes: Vec<Lane>, columns: usize, chicken: i32 },
}

/// A built domain: MDP, hidden severity, features and rendering helpers.
#[derive(Debug, Clone)]
pub struct Domain {
    pub kind: DomainKind,
    pub spec: DomainSpec,
    pub mdp: TabularMdp,
    pub nse: TrueNseModel,
    pub features: FeatureMap,
    pub width: usize,
    pub height: usize,
    cells: Vec<CellView>,
    extra: Extra,
}

impl Domain {
    pub fn build(spec: &DomainSpec) -> Result<Self> {
        let domain = match spec.name {
            DomainKind::Navigation => build_navigation(spec)?,
            DomainKind::Vase => build_vase(spec)?,
            DomainKind::Push => build_push(spec)?,
            DomainKind::Freeway => build_freeway(spec)?,
        };
        if !goal_reachable(&domain.mdp) {
            return Err(Error::InvalidDomain("goal is unreachable from the start".into()));
        }
        if spec.unavoidable && nse_avoidable(&domain) {
            return Err(Error::InvalidDomain(
                "instance is declared unavoidable but an NSE-free path to the goal exists".into(),
            ));
        }
        Ok(domain)
    }

    /// Static layout for rendering.
    pub fn cells(&self) -> &[CellView] {
        &self.cells
    }

    /// Dynamic objects visible in `state` (cars, an uncollected box, the agent).
    pub fn markers(&self, state: usize) -> Vec<Marker> {
        let rec = self.mdp.state(state);
        let (x, y) = rec.position();
        let mut out = vec![Marker { x, y, kind: "agent".into() }];
        match &self.extra {
            Extra::Grid => {}
            Extra::Push { box_cell } => {
                if rec.features[0] == 0 {
                    out.push(Marker { x: box_cell.0, y: box_cell.1, kind: "box".into() });
                } else {
                    let kind = if rec.features[1] == 1 { "wrapped_box" } else { "box" };
                    out.push(Marker { x, y, kind: kind.into() });
                }
            }
            Extra::Freeway { lanes, columns, chicken: _ } => {
                let tick = rec.coords.get(2).copied().unwrap_or(0);
                let rows = lanes.len() as i32 + 1;
                for (i, lane) in lanes.iter().enumerate() {
                    let row = i as i32 + 1;
                    out.push(Marker {
                        x: car_column(lane, tick, *columns),
                        y: rows - row,
                        kind: "car".into(),
                    });
                }
                // freeway rows count upwards; render with the goal on top
                out[0].y = rows - y;
            }
        }
        out
    }

    pub fn action_glyph(&self, a: usize) -> &'static str {
        match self.mdp.action_names()[a].as_str() {
            "up" => "^",
            "down" => "v",
            "left" => "<",
            "right" => ">",
            "wrap" => "w",
            "stay" => "o",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SeverityHistogram {
    pub acceptable: usize,
    pub mild: usize,
    pub severe: usize,
}

/// Exact counts of `(state, action)` pairs per true severity label.
pub fn severity_histogram(model: &TrueNseModel, mdp: &TabularMdp) -> SeverityHistogram {
    let mut h = SeverityHistogram::default();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            match model.severity(s, a) {
                SeverityLabel::Acceptable => h.acceptable += 1,
                SeverityLabel::Mild => h.mild += 1,
                SeverityLabel::Severe => h.severe += 1,
            }
        }
    }
    h
}

fn goal_reachable(mdp: &TabularMdp) -> bool {
    search(mdp, |s, a| mdp.transitions(s, a).iter().filter(|t| t.prob > 0.0).map(|t| t.next).collect())
}

/// True if some start-to-goal path uses only NSE-free pairs along intended moves.
pub fn nse_avoidable(domain: &Domain) -> bool {
    let mdp = &domain.mdp;
    search(mdp, |s, a| {
        if domain.nse.severity(s, a).is_acceptable() {
            mdp.transitions(s, a)
                .iter()
                .filter(|t| t.prob > 0.0 && t.next == domain.features.intended(s, a))
                .map(|t| t.next)
                .collect()
        } else {
            Vec::new()
        }
    })
}

fn search(mdp: &TabularMdp, edges: impl Fn(usize, usize) -> Vec<usize>) -> bool {
    let mut seen = vec![false; mdp.n_states()];
    let mut queue = VecDeque::from([mdp.start()]);
    seen[mdp.start()] = true;
    while let Some(s) = queue.pop_front() {
        if mdp.is_goal(s) {
            return true;
        }
        for a in 0..mdp.n_actions() {
            for next in edges(s, a) {
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
    }
    false
}

const MOVES: [(&str, i32, i32); 4] = [("up", 0, -1), ("down", 0, 1), ("left", -1, 0), ("right", 1, 0)];

fn require_map(spec: &DomainSpec) -> Result<GridMap> {
    let text = spec
        .map
        .as_deref()
        .ok_or_else(|| Error::config("domain.map", "grid domains need a map"))?;
    parse_map(text)
}

fn check_glyphs(map: &GridMap, allowed: &str, kind: DomainKind) -> Result<()> {
    for (i, &g) in map.glyphs.iter().enumerate() {
        if !allowed.contains(g) {
            return Err(Error::InvalidDomain(format!(
                "glyph {g:?} at row {}, column {} is not valid in the {kind} domain",
                i / map.width,
                i % map.width
            )));
        }
    }
    Ok(())
}

fn check_slip(spec: &DomainSpec, deterministic: bool) -> Result<()> {
    if !(spec.slip > 0.0 && spec.slip <= 1.0) {
        return Err(Error::config("domain.slip", format!("must lie in (0, 1], got {}", spec.slip)));
    }
    if deterministic && spec.slip != 1.0 {
        return Err(Error::config(
            "domain.slip",
            format!("the {} domain is deterministic; slip must be 1", spec.name),
        ));
    }
    Ok(())
}

/// Shared builder for the one-state-per-cell domains (navigation, vase).
fn build_cell_grid(
    spec: &DomainSpec,
    map: GridMap,
    feature_names: &[&str],
    features: impl Fn(Cell) -> Vec<u8>,
    severity: impl Fn(Cell) -> SeverityLabel,
) -> Result<Domain> {
    let n = map.width * map.height;
    let goal = map.index(map.goal.0, map.goal.1);
    if map.cell(map.goal.0, map.goal.1) != Cell::default() {
        return Err(Error::InvalidDomain("goal cell must be plain".into()));
    }
    let mut states = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut intended = Vec::with_capacity(n);
    for y in 0..map.height as i32 {
        for x in 0..map.width as i32 {
            let s = map.index(x, y);
            states.push(StateRecord {
                id: s,
                coords: vec![x, y],
                features: features(map.cell(x, y)),
            });
            if s == goal {
                transitions.push(vec![vec![Transition::new(s, 1.0)]; MOVES.len()]);
                costs.push(vec![0.0; MOVES.len()]);
                labels.push(vec![SeverityLabel::Acceptable; MOVES.len()]);
                intended.push(vec![s; MOVES.len()]);
                continue;
            }
            let mut t_row = Vec::new();
            let mut l_row = Vec::new();
            let mut i_row = Vec::new();
            for &(_, dx, dy) in &MOVES {
                let (nx, ny) = if map.contains(x + dx, y + dy) { (x + dx, y + dy) } else { (x, y) };
                let dest = map.index(nx, ny);
                t_row.push(if spec.slip == 1.0 {
                    vec![Transition::new(dest, 1.0)]
                } else {
                    vec![Transition::new(dest, spec.slip), Transition::new(s, 1.0 - spec.slip)]
                });
                l_row.push(severity(map.cell(nx, ny)));
                i_row.push(dest);
            }
            transitions.push(t_row);
            costs.push(vec![1.0; MOVES.len()]);
            labels.push(l_row);
            intended.push(i_row);
        }
    }
    let start = map.index(map.start.0, map.start.1);
    let mdp = TabularMdp::new(
        states,
        MOVES.iter().map(|m| m.0.to_string()).collect(),
        transitions,
        costs,
        &[goal],
        start,
        1.0,
    )?;
    let features = FeatureMap::new(feature_names, &mdp, intended);
    let cells = cell_views(&map);
    Ok(Domain {
        kind: spec.name,
        spec: spec.clone(),
        mdp,
        nse: TrueNseModel::new(labels),
        features,
        width: map.width,
        height: map.height,
        cells,
        extra: Extra::Grid,
    })
}

fn cell_views(map: &GridMap) -> Vec<CellView> {
    let mut out = Vec::with_capacity(map.cells.len());
    for y in 0..map.height as i32 {
        for x in 0..map.width as i32 {
            let kind = match map.glyphs[map.index(x, y)] {
                'S' => "start",
                '*' => "goal",
                _ => map.cell(x, y).kind(),
            };
            out.push(CellView { x, y, kind: kind.into() });
        }
    }
    out
}

/// Navigation: moving onto grass is mild, onto a puddle severe. Features `<f, p>`.
pub fn build_navigation(spec: &DomainSpec) -> Result<Domain> {
    expect_kind(spec, DomainKind::Navigation)?;
    check_slip(spec, true)?;
    let map = require_map(spec)?;
    check_glyphs(&map, ".GPS*", DomainKind::Navigation)?;
    build_cell_grid(
        spec,
        map,
        &["grass", "puddle"],
        |c| vec![c.grass as u8, c.puddle as u8],
        |c| match (c.grass, c.puddle) {
            (true, true) => SeverityLabel::Severe,
            (true, false) => SeverityLabel::Mild,
            _ => SeverityLabel::Acceptable,
        },
    )
}

/// Vase: moving into a vase on carpet is mild, into a vase on hard floor
/// severe. Moves succeed with probability `slip`. Features `<v, c>`.
pub fn build_vase(spec: &DomainSpec) -> Result<Domain> {
    expect_kind(spec, DomainKind::Vase)?;
    check_slip(spec, false)?;
    let map = require_map(spec)?;
    check_glyphs(&map, ".VCWS*", DomainKind::Vase)?;
    build_cell_grid(
        spec,
        map,
        &["vase", "carpet"],
        |c| vec![c.vase as u8, c.carpet as u8],
        |c| match (c.vase, c.carpet) {
            (true, true) => SeverityLabel::Mild,
            (true, false) => SeverityLabel::Severe,
            _ => SeverityLabel::Acceptable,
        },
    )
}

/// Push: the agent collects a box and pushes it to the goal. Pushing an
/// unwrapped box onto a hazard is severe; `wrap` (cost 1) makes pushes safe.
/// State features `<b, w, h>`.
pub fn build_push(spec: &DomainSpec) -> Result<Domain> {
    expect_kind(spec, DomainKind::Push)?;
    check_slip(spec, true)?;
    let map = require_map(spec)?;
    check_glyphs(&map, ".HS*", DomainKind::Push)?;
    let [bx, by] = spec
        .box_position
        .ok_or_else(|| Error::config("domain.box", "push needs a box position"))?;
    if !map.contains(bx, by) {
        return Err(Error::config("domain.box", "box lies outside the map"));
    }
    if map.cell(bx, by).hazard || map.cell(map.goal.0, map.goal.1).hazard {
        return Err(Error::InvalidDomain("box and goal cells must not be hazards".into()));
    }
    if (bx, by) == map.goal {
        return Err(Error::InvalidDomain("box cannot start on the goal".into()));
    }

    // carrying variants per cell: (b, w) in {(0,0), (1,0), (1,1)}
    const VARIANTS: [(u8, u8); 3] = [(0, 0), (1, 0), (1, 1)];
    let id = |x: i32, y: i32, v: usize| map.index(x, y) * 3 + v;
    let variant = |b: u8, w: u8| VARIANTS.iter().position(|&p| p == (b, w)).unwrap();
    let n = map.width * map.height * 3;
    let mut actions: Vec<String> = MOVES.iter().map(|m| m.0.to_string()).collect();
    actions.push("wrap".into());

    let mut states = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut intended = Vec::with_capacity(n);
    let mut goals = Vec::new();
    for y in 0..map.height as i32 {
        for x in 0..map.width as i32 {
            let hazard = map.cell(x, y).hazard;
            for (v, &(b, w)) in VARIANTS.iter().enumerate() {
                let s = id(x, y, v);
                states.push(StateRecord {
                    id: s,
                    coords: vec![x, y, b as i32, w as i32],
                    features: vec![b, w, hazard as u8],
                });
                if b == 1 && (x, y) == map.goal {
                    goals.push(s);
                    transitions.push(vec![vec![Transition::new(s, 1.0)]; actions.len()]);
                    costs.push(vec![0.0; actions.len()]);
                    labels.push(vec![SeverityLabel::Acceptable; actions.len()]);
                    intended.push(vec![s; actions.len()]);
                    continue;
                }
                let mut t_row = Vec::new();
                let mut l_row = Vec::new();
                let mut i_row = Vec::new();
                for &(_, dx, dy) in &MOVES {
                    let (nx, ny) = if map.contains(x + dx, y + dy) { (x + dx, y + dy) } else { (x, y) };
                    let (nb, nw) = if b == 0 && (nx, ny) == (bx, by) { (1, 0) } else { (b, w) };
                    let dest = id(nx, ny, variant(nb, nw));
                    let severe = b == 1 && w == 0 && map.cell(nx, ny).hazard;
                    t_row.push(vec![Transition::new(dest, 1.0)]);
                    l_row.push(if severe { SeverityLabel::Severe } else { SeverityLabel::Acceptable });
                    i_row.push(dest);
                }
                let wrapped = if b == 1 { id(x, y, variant(1, 1)) } else { s };
                t_row.push(vec![Transition::new(wrapped, 1.0)]);
                l_row.push(SeverityLabel::Acceptable);
                i_row.push(wrapped);
                transitions.push(t_row);
                costs.push(vec![1.0; actions.len()]);
                labels.push(l_row);
                intended.push(i_row);
            }
        }
    }
    let start_variant = if map.start == (bx, by) { 1 } else { 0 };
    let mdp = TabularMdp::new(
        states,
        actions,
        transitions,
        costs,
        &goals,
        id(map.start.0, map.start.1, start_variant),
        1.0,
    )?;
    let features = FeatureMap::new(&["box", "wrapped", "hazard"], &mdp, intended);
    let mut cells = cell_views(&map);
    cells[map.index(bx, by)].kind = "box_start".into();
    Ok(Domain {
        kind: spec.name,
        spec: spec.clone(),
        mdp,
        nse: TrueNseModel::new(labels),
        features,
        width: map.width,
        height: map.height,
        cells,
        extra: Extra::Push { box_cell: (bx, by) },
    })
}

fn car_column(lane: &Lane, tick: i32, columns: usize) -> i32 {
    (lane.start + lane.speed * tick).rem_euclid(columns as i32)
}

/// Freeway: a chicken crosses lanes of cars moving at fixed speeds. Actions
/// `up`, `down`, `stay` cost 1 and are deterministic. Stepping into a cell a
/// car occupies at the next tick is severe and knocks the chicken back one row
/// from where it was heading. Features: car occupancy within `window` columns
/// of the chicken in the lanes below, at, and above the chicken's row.
pub fn build_freeway(spec: &DomainSpec) -> Result<Domain> {
    expect_kind(spec, DomainKind::Freeway)?;
    check_slip(spec, true)?;
    let columns = spec
        .columns
        .filter(|&c| c > 0)
        .ok_or_else(|| Error::config("domain.columns", "freeway needs a positive column count"))?;
    let chicken = spec.chicken_column.unwrap_or(columns as i32 / 2);
    if chicken < 0 || chicken as usize >= columns {
        return Err(Error::config("domain.chicken_column", "outside the road"));
    }
    if spec.lanes.is_empty() {
        return Err(Error::config("domain.lanes", "freeway needs at least one lane"));
    }
    let lanes = spec.lanes.clone();
    let n_lanes = lanes.len() as i32;
    let goal_row = n_lanes + 1;
    let period = columns as i32;
    let window = spec.window as i32;

    // non-goal rows 0..=n_lanes, one state per (row, tick); the goal is one state
    let id = |row: i32, tick: i32| (row * period + tick) as usize;
    let goal = id(goal_row, 0);
    let n = goal + 1;
    let occupied = |row: i32, tick: i32, col: i32| {
        row >= 1 && row <= n_lanes && car_column(&lanes[(row - 1) as usize], tick, columns) == col
    };
    let features_of = |row: i32, tick: i32| -> Vec<u8> {
        let mut f = Vec::new();
        for rel in [-1, 0, 1] {
            for off in -window..=window {
                f.push(occupied(row + rel, tick, chicken + off) as u8);
            }
        }
        f
    };
    let mut names = Vec::new();
    for rel in ["below", "here", "above"] {
        for off in -window..=window {
            names.push(format!("car_{rel}_{off:+}"));
        }
    }
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let actions = ["up", "down", "stay"];

    let mut states = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut intended = Vec::with_capacity(n);
    for row in 0..=n_lanes {
        for tick in 0..period {
            states.push(StateRecord {
                id: id(row, tick),
                coords: vec![chicken, row, tick],
                features: features_of(row, tick),
            });
            let next_tick = (tick + 1) % period;
            let mut t_row = Vec::new();
            let mut l_row = Vec::new();
            let mut i_row = Vec::new();
            for target in [row + 1, (row - 1).max(0), row] {
                if target == goal_row {
                    t_row.push(vec![Transition::new(goal, 1.0)]);
                    l_row.push(SeverityLabel::Acceptable);
                    i_row.push(goal);
                    continue;
                }
                let hit = occupied(target, next_tick, chicken);
                let actual = if hit { (target - 1).max(0) } else { target };
                t_row.push(vec![Transition::new(id(actual, next_tick), 1.0)]);
                l_row.push(if hit { SeverityLabel::Severe } else { SeverityLabel::Acceptable });
                i_row.push(id(target, next_tick));
            }
            transitions.push(t_row);
            costs.push(vec![1.0; actions.len()]);
            labels.push(l_row);
            intended.push(i_row);
        }
    }
    states.push(StateRecord {
        id: goal,
        coords: vec![chicken, goal_row, 0],
        features: vec![0; names.len()],
    });
    transitions.push(vec![vec![Transition::new(goal, 1.0)]; actions.len()]);
    costs.push(vec![0.0; actions.len()]);
    labels.push(vec![SeverityLabel::Acceptable; actions.len()]);
    intended.push(vec![goal; actions.len()]);

    let mdp = TabularMdp::new(
        states,
        actions.iter().map(|a| a.to_string()).collect(),
        transitions,
        costs,
        &[goal],
        id(0, 0),
        1.0,
    )?;
    let features = FeatureMap::new(&names, &mdp, intended);
    let height = goal_row as usize + 1;
    let mut cells = Vec::new();
    for y in 0..height as i32 {
        let row = goal_row - y;
        for x in 0..columns as i32 {
            let kind = if row == goal_row {
                "goal"
            } else if row == 0 {
                "start"
            } else {
                "lane"
            };
            cells.push(CellView { x, y, kind: kind.into() });
        }
    }
    Ok(Domain {
        kind: spec.name,
        spec: spec.clone(),
        mdp,
        nse: TrueNseModel::new(labels),
        features,
        width: columns,
        height,
        cells,
        extra: Extra::Freeway { lanes, columns, chicken },
    })
}

fn expect_kind(spec: &DomainSpec, kind: DomainKind) -> Result<()> {
    if spec.name != kind {
        return Err(Error::config("domain.name", format!("expected {kind}, got {}", spec.name)));
    }
    Ok(())
}
