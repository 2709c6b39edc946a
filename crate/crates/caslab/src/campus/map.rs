//! Campus map files.
//!
//! A map file is an ASCII grid followed by attribute tables:
//!
//! ```text
//! # comment lines start with '#' and a space
//! R.D..
//! ..C..
//! door 2 0 light red push open
//! crosswalk 2 1 clear one-way none
//! room 0 0 mailroom
//! ```
//!
//! Grid rows use `.` free, `#` blocked, `D` door, `C` crosswalk and `R` room.
//! The grid ends at the first table row. Coordinates are `x y`, zero-based,
//! with `y = 0` on the first grid row. In table rows a token starting with
//! `#` comments out the rest of the line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::{campus_catalog, Dir, COLOR, MECHANISM, OPEN, SIZE, STREET, TRAFFIC, VISIBILITY};
use crate::feedback::{Assignment, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Blocked,
    Door,
    Crosswalk,
    Room,
}

impl Cell {
    fn from_char(c: char) -> Option<Cell> {
        Some(match c {
            '.' => Cell::Free,
            '#' => Cell::Blocked,
            'D' => Cell::Door,
            'C' => Cell::Crosswalk,
            'R' => Cell::Room,
            _ => return None,
        })
    }

    pub fn code(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Blocked => '#',
            Cell::Door => 'D',
            Cell::Crosswalk => 'C',
            Cell::Room => 'R',
        }
    }

    pub fn traversable(self) -> bool {
        self != Cell::Blocked
    }

    pub fn is_obstacle(self) -> bool {
        matches!(self, Cell::Door | Cell::Crosswalk)
    }
}

pub type Pos = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Door {
    pub pos: Pos,
    pub size: ValueId,
    pub color: ValueId,
    pub mechanism: ValueId,
    /// Open flag at the start of a trial.
    pub open: ValueId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crosswalk {
    pub pos: Pos,
    pub visibility: ValueId,
    pub street: ValueId,
    /// Traffic at the start of a trial.
    pub traffic: ValueId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampusMap {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub doors: Vec<Door>,
    pub crosswalks: Vec<Crosswalk>,
    /// Room names in file order.
    pub rooms: Vec<(String, Pos)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("line {line}, column {column}: {message}")]
    At { line: usize, column: usize, message: String },
    #[error("cell ({x}, {y}): {message}")]
    Cell { x: usize, y: usize, message: String },
    #[error("{0}")]
    Io(String),
}

/// Structural properties a map should have but that do not prevent loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapWarning {
    /// No building whose door colors follow door sizes, with a door elsewhere breaking the pattern.
    ColorSizePattern,
    /// Street type does not follow visibility with exactly one exception.
    StreetVisibilityPattern {
        crosswalks: usize,
    },
    TooFewCrosswalks(usize),
    TooFewDoors(usize),
}

impl fmt::Display for MapWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapWarning::ColorSizePattern => {
                write!(f, "no building has door colors determined by size with a door elsewhere breaking it")
            }
            MapWarning::StreetVisibilityPattern { crosswalks } => {
                write!(f, "street type of the {crosswalks} crosswalks is not a function of visibility with exactly one exception")
            }
            MapWarning::TooFewCrosswalks(n) => write!(f, "only {n} crosswalks, expected at least 2"),
            MapWarning::TooFewDoors(n) => write!(f, "only {n} doors, expected at least 6"),
        }
    }
}

impl CampusMap {
    pub fn cell(&self, (x, y): Pos) -> Cell {
        self.cells[y * self.width + x]
    }

    pub fn door_at(&self, pos: Pos) -> Option<&Door> {
        self.doors.iter().find(|d| d.pos == pos)
    }

    pub fn crosswalk_at(&self, pos: Pos) -> Option<&Crosswalk> {
        self.crosswalks.iter().find(|c| c.pos == pos)
    }

    pub fn room(&self, name: &str) -> Option<Pos> {
        self.rooms.iter().find(|(n, _)| n == name).map(|(_, p)| *p)
    }

    pub fn room_names(&self) -> Vec<&str> {
        self.rooms.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn neighbour(&self, pos: Pos, dir: Dir) -> Option<Pos> {
        dir.step(pos, self.width, self.height)
    }

    /// Directions leading to a traversable cell.
    pub fn open_dirs(&self, pos: Pos) -> Vec<Dir> {
        Dir::ALL.into_iter().filter(|&d| self.neighbour(pos, d).is_some_and(|n| self.cell(n).traversable())).collect()
    }

    pub fn obstacles(&self) -> Vec<Pos> {
        let mut out: Vec<Pos> = self.doors.iter().map(|d| d.pos).chain(self.crosswalks.iter().map(|c| c.pos)).collect();
        out.sort_by_key(|&(x, y)| (y, x));
        out
    }

    /// Static features of an obstacle over the complete catalog; dynamic ones are left empty.
    pub fn static_features(&self, pos: Pos) -> Assignment {
        let mut a = vec![None; campus_catalog().len()];
        if let Some(d) = self.door_at(pos) {
            a[SIZE] = Some(d.size);
            a[COLOR] = Some(d.color);
            a[MECHANISM] = Some(d.mechanism);
        } else if let Some(c) = self.crosswalk_at(pos) {
            a[VISIBILITY] = Some(c.visibility);
            a[STREET] = Some(c.street);
        }
        a
    }

    /// Initial values of the dynamic features, indexed like [`CampusMap::obstacles`].
    pub fn initial_dynamics(&self) -> Vec<ValueId> {
        self.obstacles()
            .into_iter()
            .map(|p| match self.door_at(p) {
                Some(d) => d.open,
                None => self.crosswalk_at(p).map_or(0, |c| c.traffic),
            })
            .collect()
    }

    /// Groups of doors connected through room and door cells.
    pub fn buildings(&self) -> Vec<Vec<usize>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for start in self.doors.iter().map(|d| d.pos) {
            if seen.contains(&start) {
                continue;
            }
            let mut stack = vec![start];
            seen.insert(start);
            let mut group = Vec::new();
            while let Some(p) = stack.pop() {
                if let Some(i) = self.doors.iter().position(|d| d.pos == p) {
                    group.push(i);
                }
                for d in Dir::ALL {
                    if let Some(n) = self.neighbour(p, d) {
                        if matches!(self.cell(n), Cell::Room | Cell::Door) && seen.insert(n) {
                            stack.push(n);
                        }
                    }
                }
            }
            group.sort_unstable();
            out.push(group);
        }
        out
    }

    /// Checks the correlation structure the experiments rely on.
    pub fn warnings(&self) -> Vec<MapWarning> {
        let mut out = Vec::new();
        if self.crosswalks.len() < 2 {
            out.push(MapWarning::TooFewCrosswalks(self.crosswalks.len()));
        }
        if self.doors.len() < 6 {
            out.push(MapWarning::TooFewDoors(self.doors.len()));
        }
        if !self.has_color_size_pattern() {
            out.push(MapWarning::ColorSizePattern);
        }
        if !self.has_street_pattern() {
            out.push(MapWarning::StreetVisibilityPattern { crosswalks: self.crosswalks.len() });
        }
        out
    }

    fn has_color_size_pattern(&self) -> bool {
        self.buildings().iter().any(|group| {
            let mut f: BTreeMap<ValueId, ValueId> = BTreeMap::new();
            for &i in group {
                let d = &self.doors[i];
                if *f.entry(d.size).or_insert(d.color) != d.color {
                    return false;
                }
            }
            f.len() >= 2
                && self
                    .doors
                    .iter()
                    .enumerate()
                    .any(|(i, d)| !group.contains(&i) && f.get(&d.size).is_some_and(|&c| c != d.color))
        })
    }

    fn has_street_pattern(&self) -> bool {
        // Every map from the two visibility values to the two street types.
        (0..4u16).any(|code| {
            let f = |v: ValueId| (code >> v) & 1;
            self.crosswalks.iter().filter(|c| f(c.visibility) != c.street).count() == 1
        })
    }
}

pub fn load_map(path: impl AsRef<Path>) -> Result<CampusMap, MapError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MapError::Io(format!("{}: {e}", path.display())))?;
    parse_map(&text)
}

fn is_comment(line: &str) -> bool {
    let mut chars = line.chars();
    chars.next() == Some('#') && chars.next().is_none_or(char::is_whitespace)
}

const TABLES: [&str; 3] = ["door", "crosswalk", "room"];

/// Whitespace-separated tokens with their 1-based columns, up to a `#` token.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    let cut = out.iter().position(|(_, t)| t.starts_with('#')).unwrap_or(out.len());
    out.truncate(cut);
    out
}

pub fn parse_map(text: &str) -> Result<CampusMap, MapError> {
    let catalog = campus_catalog();
    let at = |line: usize, column: usize, message: String| MapError::At { line, column, message };

    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut width = 0;
    let mut doors = Vec::new();
    let mut crosswalks = Vec::new();
    let mut rooms: Vec<(String, Pos)> = Vec::new();
    let mut in_tables = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() || is_comment(line.trim_start()) {
            continue;
        }
        if !in_tables && line.split_whitespace().next().is_some_and(|w| TABLES.contains(&w)) {
            in_tables = true;
        }
        if !in_tables {
            let mut row = Vec::new();
            for (col, ch) in line.chars().enumerate() {
                let cell = Cell::from_char(ch).ok_or_else(|| {
                    at(line_no, col + 1, format!("unknown cell code {ch:?} at ({col}, {})", rows.len()))
                })?;
                row.push(cell);
            }
            if rows.is_empty() {
                width = row.len();
            } else if row.len() != width {
                return Err(at(
                    line_no,
                    row.len().min(width) + 1,
                    format!("row has width {}, expected {width}", row.len()),
                ));
            }
            rows.push(row);
            continue;
        }

        let toks = tokens(line);
        if toks.is_empty() {
            continue;
        }
        let (kind_col, kind) = toks[0];
        let arity = match kind {
            "door" => 7,
            "crosswalk" => 6,
            "room" => 4,
            other => return Err(at(line_no, kind_col, format!("unknown table {other:?}"))),
        };
        if toks.len() != arity {
            let col = toks.get(arity).map_or(line.len() + 1, |t| t.0);
            return Err(at(line_no, col, format!("{kind} row needs {} fields, found {}", arity - 1, toks.len() - 1)));
        }
        let coord = |k: usize, limit: usize| -> Result<usize, MapError> {
            let (col, t) = toks[k];
            let v: usize = t.parse().map_err(|_| at(line_no, col, format!("invalid coordinate {t:?}")))?;
            if v >= limit {
                return Err(at(line_no, col, format!("coordinate {v} outside the grid")));
            }
            Ok(v)
        };
        let x = coord(1, width)?;
        let y = coord(2, rows.len())?;
        let expected = match kind {
            "door" => Cell::Door,
            "crosswalk" => Cell::Crosswalk,
            _ => Cell::Room,
        };
        if rows[y][x] != expected {
            return Err(at(
                line_no,
                toks[1].0,
                format!("{kind} entry at ({x}, {y}) but the grid has {:?}", rows[y][x].code()),
            ));
        }
        let value = |k: usize, feature: usize| -> Result<ValueId, MapError> {
            let (col, t) = toks[k];
            let f = catalog.feature(feature);
            f.value_id(t)
                .ok_or_else(|| at(line_no, col, format!("unknown {} {t:?}; expected one of {:?}", f.name, f.values)))
        };
        let duplicate = || at(line_no, toks[0].0, format!("second {kind} entry for ({x}, {y})"));
        match kind {
            "door" => {
                if doors.iter().any(|d: &Door| d.pos == (x, y)) {
                    return Err(duplicate());
                }
                doors.push(Door {
                    pos: (x, y),
                    size: value(3, SIZE)?,
                    color: value(4, COLOR)?,
                    mechanism: value(5, MECHANISM)?,
                    open: value(6, OPEN)?,
                });
            }
            "crosswalk" => {
                if crosswalks.iter().any(|c: &Crosswalk| c.pos == (x, y)) {
                    return Err(duplicate());
                }
                crosswalks.push(Crosswalk {
                    pos: (x, y),
                    visibility: value(3, VISIBILITY)?,
                    street: value(4, STREET)?,
                    traffic: value(5, TRAFFIC)?,
                });
            }
            _ => {
                let name = toks[3].1.to_string();
                if rooms.iter().any(|(_, p)| *p == (x, y)) {
                    return Err(duplicate());
                }
                if rooms.iter().any(|(n, _)| *n == name) {
                    return Err(at(line_no, toks[3].0, format!("room name {name:?} used twice")));
                }
                rooms.push((name, (x, y)));
            }
        }
    }

    if rows.is_empty() {
        return Err(at(1, 1, "map has no grid".into()));
    }
    let map =
        CampusMap { width, height: rows.len(), cells: rows.into_iter().flatten().collect(), doors, crosswalks, rooms };
    check_structure(&map)?;
    Ok(map)
}

fn check_structure(map: &CampusMap) -> Result<(), MapError> {
    for y in 0..map.height {
        for x in 0..map.width {
            let p = (x, y);
            let err = |message: String| MapError::Cell { x, y, message };
            let cell = map.cell(p);
            let listed = match cell {
                Cell::Door => map.door_at(p).is_some(),
                Cell::Crosswalk => map.crosswalk_at(p).is_some(),
                Cell::Room => map.rooms.iter().any(|(_, q)| *q == p),
                _ => true,
            };
            if !listed {
                return Err(err(format!("{:?} cell has no attribute row", cell.code())));
            }
            if !cell.is_obstacle() {
                continue;
            }
            let dirs = map.open_dirs(p);
            if dirs.len() != 2 || dirs[0].opposite() != dirs[1] {
                return Err(err("an obstacle needs exactly two opposite traversable neighbours".into()));
            }
            if dirs.iter().any(|&d| map.neighbour(p, d).is_some_and(|n| map.cell(n).is_obstacle())) {
                return Err(err("obstacles may not touch each other".into()));
            }
        }
    }
    Ok(())
}
