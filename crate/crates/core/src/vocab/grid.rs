//! Discretized ground plane used for goal tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square ground-plane grid centred on the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Side length in metres.
    pub extent: f64,
    /// Cell side length in metres.
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            extent: 14.0,
            resolution: 0.5,
        }
    }
}

/// A grid cell addressed as `[i, j]` = `[column along x, row along z]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct GridCell {
    pub col: usize,
    pub row: usize,
}

impl From<[usize; 2]> for GridCell {
    fn from([col, row]: [usize; 2]) -> Self {
        Self { col, row }
    }
}

impl From<GridCell> for [usize; 2] {
    fn from(c: GridCell) -> Self {
        [c.col, c.row]
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.resolution > 0.0) {
            return Err(Error::Config("grid extent and resolution must be positive".into()));
        }
        let ratio = self.extent / self.resolution;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "grid extent {} is not a multiple of resolution {}",
                self.extent, self.resolution
            )));
        }
        Ok(())
    }

    /// Cells along one side.
    pub fn side(&self) -> usize {
        (self.extent / self.resolution).round() as usize
    }

    pub fn num_cells(&self) -> usize {
        self.side() * self.side()
    }

    fn axis_index(&self, v: f64) -> usize {
        let i = ((v + self.extent / 2.0) / self.resolution).floor() as usize;
        i.min(self.side() - 1)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let h = self.extent / 2.0;
        x.abs() <= h && z.abs() <= h
    }

    /// Cell containing `(x, z)`; the upper edge clamps into the last cell.
    pub fn cell_at(&self, x: f64, z: f64) -> Result<GridCell> {
        if !(x.is_finite() && z.is_finite() && self.contains(x, z)) {
            return Err(Error::Data(format!(
                "point ({x}, {z}) lies outside the {} m grid",
                self.extent
            )));
        }
        Ok(GridCell {
            col: self.axis_index(x),
            row: self.axis_index(z),
        })
    }

    /// Row-major index from the `(-extent/2, -extent/2)` corner.
    pub fn index(&self, cell: GridCell) -> Result<usize> {
        let n = self.side();
        if cell.col >= n || cell.row >= n {
            return Err(Error::Data(format!("cell [{}, {}] outside a {n}x{n} grid", cell.col, cell.row)));
        }
        Ok(cell.row * n + cell.col)
    }

    pub fn cell(&self, index: usize) -> Result<GridCell> {
        let n = self.side();
        if index >= n * n {
            return Err(Error::Data(format!("cell index {index} outside a {n}x{n} grid")));
        }
        Ok(GridCell {
            col: index % n,
            row: index / n,
        })
    }

    pub fn center(&self, cell: GridCell) -> (f64, f64) {
        let h = self.extent / 2.0;
        (
            -h + (cell.col as f64 + 0.5) * self.resolution,
            -h + (cell.row as f64 + 0.5) * self.resolution,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_784_cells() {
        assert_eq!(GridSpec::default().num_cells(), 784);
    }

    #[test]
    fn corner_centre_and_edge() {
        let g = GridSpec::default();
        assert_eq!(g.index(g.cell_at(-7.0, -7.0).unwrap()).unwrap(), 0);
        let c = g.cell_at(0.25, 0.25).unwrap();
        assert_eq!((c.col, c.row), (14, 14));
        assert_eq!(g.index(c).unwrap(), 406);
        assert_eq!(g.center(c), (0.25, 0.25));
        assert_eq!(g.index(g.cell_at(7.0, 7.0).unwrap()).unwrap(), 783);
        assert!(g.cell_at(7.01, 0.0).is_err());
    }

    #[test]
    fn rejects_non_integer_ratio() {
        let g = GridSpec {
            extent: 14.0,
            resolution: 0.3,
        };
        assert!(g.validate().is_err());
    }
}
