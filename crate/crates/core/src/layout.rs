//! Grid-based part layouts: which cells of the generator's first spatial
//! block each latent part owns.
//!
//! A layout is stored as one cell list per part, so an invalid layout (gaps,
//! overlaps, empty parts) can be represented and reported on. Everything
//! downstream of [`PartLayout::validated`] may assume a partition of the grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// 1-based part index.
pub type PartId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
}

impl GridCell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartLayout {
    grid_height: usize,
    grid_width: usize,
    cells_by_part: Vec<Vec<GridCell>>,
    part_names: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    FaceSwap,
    FacialParts,
}

impl LayoutKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::FaceSwap => "face_swap",
            Self::FacialParts => "facial_parts",
        }
    }
}

impl FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face_swap" | "face-swap" => Ok(Self::FaceSwap),
            "facial_parts" | "facial-parts" => Ok(Self::FacialParts),
            other => Err(Error::UnknownLayoutKind(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyGrid,
    NoParts,
    /// Cell owned by no part.
    Unassigned(GridCell),
    /// Cell owned by more than one part.
    Overlap {
        cell: GridCell,
        parts: Vec<PartId>,
    },
    /// Same cell listed twice for one part.
    DuplicateCell {
        cell: GridCell,
        part: PartId,
    },
    OutOfBounds {
        cell: GridCell,
        part: PartId,
    },
    EmptyPart(PartId),
    NameCount {
        names: usize,
        parts: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGrid => write!(f, "grid has zero cells"),
            Violation::NoParts => write!(f, "layout declares no parts"),
            Violation::Unassigned(c) => write!(f, "coverage: cell {c} is not assigned to any part"),
            Violation::Overlap { cell, parts } => {
                write!(f, "overlap: cell {cell} is assigned to parts {parts:?}")
            }
            Violation::DuplicateCell { cell, part } => {
                write!(f, "duplicate: cell {cell} listed twice for part {part}")
            }
            Violation::OutOfBounds { cell, part } => {
                write!(f, "bounds: part {part} lists cell {cell} outside the grid")
            }
            Violation::EmptyPart(p) => write!(f, "empty part: part {p} owns no cell"),
            Violation::NameCount { names, parts } => {
                write!(f, "{names} part names given for {parts} parts")
            }
        }
    }
}

/// `ok` iff `violations` is empty.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

impl PartLayout {
    /// Build from explicit per-part cell lists. No validation.
    pub fn from_part_cells(
        grid_height: usize,
        grid_width: usize,
        cells_by_part: Vec<Vec<GridCell>>,
        part_names: Vec<String>,
    ) -> Self {
        Self {
            grid_height,
            grid_width,
            cells_by_part,
            part_names,
        }
    }

    /// Build from a row-major grid of part ids; `0` marks an unassigned cell.
    pub fn from_grid(
        grid_height: usize,
        grid_width: usize,
        num_parts: usize,
        ids: &[usize],
        part_names: Vec<String>,
    ) -> Result<Self> {
        if ids.len() != grid_height * grid_width {
            return Err(Error::InvalidLayout(format!(
                "{} ids for a {grid_height}x{grid_width} grid",
                ids.len()
            )));
        }
        let mut cells_by_part = vec![Vec::new(); num_parts];
        for (i, &id) in ids.iter().enumerate() {
            if id == 0 {
                continue;
            }
            if id > num_parts {
                return Err(Error::PartOutOfRange { part: id, num_parts });
            }
            cells_by_part[id - 1].push(GridCell::new(i / grid_width, i % grid_width));
        }
        Ok(Self::from_part_cells(
            grid_height,
            grid_width,
            cells_by_part,
            part_names,
        ))
    }

    /// A single part covering a `h × w` grid: the standard single-latent GAN.
    pub fn single_part(grid_height: usize, grid_width: usize) -> Self {
        let ids = vec![1; grid_height * grid_width];
        Self::from_grid(grid_height, grid_width, 1, &ids, vec!["whole".into()])
            .expect("single-part grid is well formed")
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn num_parts(&self) -> usize {
        self.cells_by_part.len()
    }

    pub fn num_cells(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn part_name(&self, part: PartId) -> Option<&str> {
        self.part_names.get(part.wrapping_sub(1)).map(String::as_str)
    }

    pub fn cell_count(&self, part: PartId) -> Result<usize> {
        self.check_part(part)?;
        Ok(self.cells_by_part[part - 1].len())
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        self.cells_by_part.iter().map(Vec::len).collect()
    }

    pub fn check_part(&self, part: PartId) -> Result<()> {
        if part == 0 || part > self.num_parts() {
            Err(Error::PartOutOfRange {
                part,
                num_parts: self.num_parts(),
            })
        } else {
            Ok(())
        }
    }

    /// Cells of `part` in row-major order.
    pub fn part_cells(&self, part: PartId) -> Result<Vec<GridCell>> {
        self.check_part(part)?;
        let mut cells = self.cells_by_part[part - 1].clone();
        cells.sort();
        Ok(cells)
    }

    /// Owning part of every cell, row-major. For a valid layout every entry is
    /// `Some`; with overlaps the highest part id wins.
    pub fn owner_grid(&self) -> Vec<Option<PartId>> {
        let mut grid = vec![None; self.num_cells()];
        for (i, cells) in self.cells_by_part.iter().enumerate() {
            for c in cells {
                if c.row < self.grid_height && c.col < self.grid_width {
                    grid[c.row * self.grid_width + c.col] = Some(i + 1);
                }
            }
        }
        grid
    }

    pub fn owner(&self, cell: GridCell) -> Option<PartId> {
        if cell.row >= self.grid_height || cell.col >= self.grid_width {
            return None;
        }
        self.owner_grid()[cell.row * self.grid_width + cell.col]
    }

    pub fn validate(&self) -> ValidationReport {
        validate_layout(self)
    }

    /// `self` if valid, otherwise an error listing every violation.
    pub fn validated(self) -> Result<Self> {
        let report = validate_layout(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(Error::InvalidLayout(
                report
                    .violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            ))
        }
    }

    /// Short content hash of the canonical text form.
    pub fn layout_id(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Whether the layout is its own left-right mirror image.
    pub fn is_mirror_symmetric(&self) -> bool {
        let owners = self.owner_grid();
        let w = self.grid_width;
        (0..self.grid_height).all(|r| (0..w).all(|c| owners[r * w + c] == owners[r * w + (w - 1 - c)]))
    }

    /// Canonical layout-file text.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# puzzlegan layout v1\n");
        s.push_str(&format!("grid_height: {}\n", self.grid_height));
        s.push_str(&format!("grid_width: {}\n", self.grid_width));
        s.push_str(&format!("num_parts: {}\n", self.num_parts()));
        if !self.part_names.is_empty() {
            s.push_str(&format!("part_names: {}\n", self.part_names.join(" | ")));
        }
        s.push_str("grid:\n");
        let owners = self.owner_grid();
        for r in 0..self.grid_height {
            let row: Vec<String> = (0..self.grid_width)
                .map(|c| owners[r * self.grid_width + c].unwrap_or(0).to_string())
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parse layout-file text. Rows must all have `grid_width` entries.
    /// The result is not validated; call [`validate_layout`] on it.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut height = None;
        let mut width = None;
        let mut parts = None;
        let mut names = Vec::new();
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };

        for (no, raw) in lines.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| parse_err(no, format!("expected `key: value`, got `{line}`")))?;
            let value = value.trim();
            let number = || {
                value
                    .parse::<usize>()
                    .map_err(|_| parse_err(no, format!("`{key}` must be a non-negative integer")))
            };
            match key.trim() {
                "grid_height" => height = Some(number()?),
                "grid_width" => width = Some(number()?),
                "num_parts" => parts = Some(number()?),
                "part_names" => names = value.split('|').map(|n| n.trim().to_string()).collect(),
                "grid" => break,
                other => return Err(parse_err(no, format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            msg: format!("missing `{k}`"),
        };
        let height = height.ok_or_else(|| missing("grid_height"))?;
        let width = width.ok_or_else(|| missing("grid_width"))?;
        let parts = parts.ok_or_else(|| missing("num_parts"))?;

        let mut ids = Vec::with_capacity(height * width);
        let mut rows = 0;
        let mut last_line = 0;
        for (no, raw) in lines {
            last_line = no;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if rows == height {
                return Err(parse_err(no, format!("more than {height} grid rows")));
            }
            let row: Vec<&str> = line.split_whitespace().collect();
            if row.len() != width {
                return Err(parse_err(
                    no,
                    format!("ragged row: {} entries, expected {width}", row.len()),
                ));
            }
            for tok in row {
                let id = tok
                    .parse::<usize>()
                    .map_err(|_| parse_err(no, format!("bad part id `{tok}`")))?;
                if id > parts {
                    return Err(parse_err(no, format!("part id {id} exceeds num_parts {parts}")));
                }
                ids.push(id);
            }
            rows += 1;
        }
        if rows != height {
            return Err(parse_err(
                last_line,
                format!("found {rows} grid rows, expected {height}"),
            ));
        }
        Self::from_grid(height, width, parts, &ids, names)
    }
}

/// Check every partition invariant, reporting each offending cell or part.
pub fn validate_layout(layout: &PartLayout) -> ValidationReport {
    let mut violations = Vec::new();
    let (h, w) = (layout.grid_height, layout.grid_width);
    if h == 0 || w == 0 {
        violations.push(Violation::EmptyGrid);
    }
    if layout.num_parts() == 0 {
        violations.push(Violation::NoParts);
    }
    if !layout.part_names.is_empty() && layout.part_names.len() != layout.num_parts() {
        violations.push(Violation::NameCount {
            names: layout.part_names.len(),
            parts: layout.num_parts(),
        });
    }
    let mut owners: Vec<Vec<PartId>> = vec![Vec::new(); h * w];
    for (i, cells) in layout.cells_by_part.iter().enumerate() {
        let part = i + 1;
        if cells.is_empty() {
            violations.push(Violation::EmptyPart(part));
        }
        for &cell in cells {
            if cell.row >= h || cell.col >= w {
                violations.push(Violation::OutOfBounds { cell, part });
                continue;
            }
            let slot = &mut owners[cell.row * w + cell.col];
            if slot.contains(&part) {
                violations.push(Violation::DuplicateCell { cell, part });
            } else {
                slot.push(part);
            }
        }
    }
    for (idx, parts) in owners.into_iter().enumerate() {
        let cell = GridCell::new(idx / w, idx % w);
        match parts.len() {
            0 => violations.push(Violation::Unassigned(cell)),
            1 => {}
            _ => violations.push(Violation::Overlap { cell, parts }),
        }
    }
    ValidationReport { violations }
}

fn rect(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> Vec<GridCell> {
    rows.flat_map(|r| cols.clone().map(move |c| GridCell::new(r, c)))
        .collect()
}

/// The two 8×8 face layouts.
///
/// `FaceSwap`: part 1 is the face (rows 2–6, cols 2–5), part 2 everything
/// else. `FacialParts`: 1 background/hair, 2 hairline/forehead (row 2),
/// 3 eyes (row 3), 4 nose/mouth (rows 4–5, cols 3–4), 5 face shape (the
/// U-shaped rim rows 4–5 cols 2 and 5, plus row 6).
pub fn canonical_layout(kind: LayoutKind) -> PartLayout {
    const N: usize = 8;
    let (parts, names): (Vec<Vec<GridCell>>, Vec<&str>) = match kind {
        LayoutKind::FaceSwap => (vec![rect(2..=6, 2..=5)], vec!["face", "everything else"]),
        LayoutKind::FacialParts => {
            let mut shape = rect(4..=5, 2..=2);
            shape.extend(rect(4..=5, 5..=5));
            shape.extend(rect(6..=6, 2..=5));
            (
                vec![rect(2..=2, 2..=5), rect(3..=3, 2..=5), rect(4..=5, 3..=4), shape],
                vec![
                    "background/hair",
                    "hairline/forehead",
                    "eyes",
                    "nose/mouth",
                    "face shape",
                ],
            )
        }
    };
    let mut ids = vec![0usize; N * N];
    // For face_swap the explicit part is part 1; for facial_parts parts 2..=5.
    let first = match kind {
        LayoutKind::FaceSwap => 1,
        LayoutKind::FacialParts => 2,
    };
    for (i, cells) in parts.iter().enumerate() {
        for c in cells {
            ids[c.row * N + c.col] = first + i;
        }
    }
    let rest = match kind {
        LayoutKind::FaceSwap => 2,
        LayoutKind::FacialParts => 1,
    };
    ids.iter_mut().filter(|id| **id == 0).for_each(|id| *id = rest);
    PartLayout::from_grid(N, N, names.len(), &ids, names.into_iter().map(String::from).collect())
        .expect("canonical layouts are well formed")
}
