//! Band-major raster cubes and small grid helpers shared by every module.

/// A `[band][row][col]` cube stored contiguously, band-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube<T> {
    bands: usize,
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Cube<T> {
    pub fn zeros(bands: usize, rows: usize, cols: usize) -> Self {
        Cube {
            bands,
            rows,
            cols,
            data: vec![T::default(); bands * rows * cols],
        }
    }
}

impl<T: Copy> Cube<T> {
    /// Wraps an existing buffer. Returns `None` when the length does not
    /// match the stated dimensions.
    pub fn from_vec(bands: usize, rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == bands * rows * cols).then_some(Cube {
            bands,
            rows,
            cols,
            data,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn band(&self, b: usize) -> &[T] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.pixels();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn get(&self, b: usize, r: usize, c: usize) -> T {
        self.data[(b * self.rows + r) * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, b: usize, r: usize, c: usize, v: T) {
        self.data[(b * self.rows + r) * self.cols + c] = v;
    }

    /// Value of band `b` at flat pixel index `p = r * cols + c`.
    #[inline]
    pub fn at(&self, b: usize, p: usize) -> T {
        self.data[b * self.pixels() + p]
    }

    pub fn spectrum_at(&self, p: usize) -> Vec<T> {
        (0..self.bands).map(|b| self.at(b, p)).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Cube<U> {
        Cube {
            bands: self.bands,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Grid pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub fn new(row: usize, col: usize) -> Self {
        Pixel { row, col }
    }

    pub fn index(self, cols: usize) -> usize {
        self.row * cols + self.col
    }

    pub fn from_index(p: usize, cols: usize) -> Self {
        Pixel {
            row: p / cols,
            col: p % cols,
        }
    }

    pub fn l1(self, other: Pixel) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

/// The in-bounds 4-neighbours of flat index `p`.
pub fn neighbors4(p: usize, rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (p / cols, p % cols);
    let up = (r > 0).then(|| p - cols);
    let down = (r + 1 < rows).then(|| p + cols);
    let left = (c > 0).then(|| p - 1);
    let right = (c + 1 < cols).then(|| p + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Inclusive row/column extent of a pixel set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn of(pixels: &[Pixel]) -> Option<BBox> {
        let first = pixels.first()?;
        let mut b = BBox {
            row_min: first.row,
            row_max: first.row,
            col_min: first.col,
            col_max: first.col,
        };
        for p in &pixels[1..] {
            b.row_min = b.row_min.min(p.row);
            b.row_max = b.row_max.max(p.row);
            b.col_min = b.col_min.min(p.col);
            b.col_max = b.col_max.max(p.col);
        }
        Some(b)
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }
}
