use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::config::{DomainConfig, DomainKind};

/// Grid cell. Ordering is `(y, x)` lexicographic, which is the tie-break
/// order used throughout planning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub y: usize,
    pub x: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { y, x }
    }

    pub fn center(self) -> (f64, f64) {
        (self.x as f64 + 0.5, self.y as f64 + 0.5)
    }

    pub fn dist(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx.hypot(dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hideout {
    pub cell: Cell,
    /// Known a priori to the blue team.
    pub known: bool,
}

/// Terrain map plus landmarks for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TerrainGrid {
    pub domain: DomainKind,
    pub width: usize,
    pub height: usize,
    pub visibility: Vec<f32>,
    pub forest_density: Vec<f32>,
    pub water: Vec<bool>,
    pub hideouts: Vec<Hideout>,
    pub rendezvous: Vec<Cell>,
    pub adversary_start: Cell,
    pub dark_forest_threshold: f64,
}

const MIN_VISIBILITY: f32 = 0.05;
/// Visibility lost per unit of forest density.
const FOREST_OCCLUSION: f32 = 0.95;

impl TerrainGrid {
    /// Uniform open terrain: full visibility, no forest, everything traversable.
    pub fn open(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            domain: DomainKind::Prison,
            width,
            height,
            visibility: vec![1.0; n],
            forest_density: vec![0.0; n],
            water: vec![false; n],
            hideouts: Vec::new(),
            rendezvous: Vec::new(),
            adversary_start: Cell::new(0, 0),
            dark_forest_threshold: 0.3,
        }
    }

    /// Sets forest density of one cell and derives its visibility.
    pub fn set_forest(&mut self, cell: Cell, density: f32) {
        let i = self.index(cell);
        self.forest_density[i] = density.clamp(0.0, 1.0);
        self.visibility[i] = visibility_from_forest(self.forest_density[i]);
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn visibility_at(&self, cell: Cell) -> f64 {
        self.visibility[self.index(cell)] as f64
    }

    pub fn forest_at(&self, cell: Cell) -> f64 {
        self.forest_density[self.index(cell)] as f64
    }

    /// Cells the adversary (and vessels) may occupy: everything in Prison
    /// Escape, water in the Narco domain.
    pub fn traversable(&self, cell: Cell) -> bool {
        self.contains(cell)
            && match self.domain {
                DomainKind::Prison => !self.water[self.index(cell)],
                DomainKind::Narco => self.water[self.index(cell)],
            }
    }

    /// Cell containing a continuous position (cell units), clamped to the grid.
    pub fn cell_of(&self, pos: (f64, f64)) -> Cell {
        let x = (pos.0.max(0.0) as usize).min(self.width - 1);
        let y = (pos.1.max(0.0) as usize).min(self.height - 1);
        Cell::new(x, y)
    }

    pub fn is_dark(&self, cell: Cell) -> bool {
        self.visibility_at(cell) < self.dark_forest_threshold
    }

    /// Traversable dark-forest cells in `(y, x)` order.
    pub fn dark_forest_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                if self.is_dark(c) && self.traversable(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Bit-exact serialization used for determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.visibility.len() * 9 + 64);
        out.extend((self.width as u64).to_le_bytes());
        out.extend((self.height as u64).to_le_bytes());
        for v in &self.visibility {
            out.extend(v.to_le_bytes());
        }
        for v in &self.forest_density {
            out.extend(v.to_le_bytes());
        }
        out.extend(self.water.iter().map(|&w| w as u8));
        for h in &self.hideouts {
            out.extend((h.cell.x as u64).to_le_bytes());
            out.extend((h.cell.y as u64).to_le_bytes());
            out.push(h.known as u8);
        }
        for r in &self.rendezvous {
            out.extend((r.x as u64).to_le_bytes());
            out.extend((r.y as u64).to_le_bytes());
        }
        out.extend((self.adversary_start.x as u64).to_le_bytes());
        out.extend((self.adversary_start.y as u64).to_le_bytes());
        out
    }
}

pub fn visibility_from_forest(density: f32) -> f32 {
    (1.0 - FOREST_OCCLUSION * density).clamp(MIN_VISIBILITY, 1.0)
}

/// Procedural terrain: smoothed value noise mapped so roughly
/// `dark_forest_fraction` of cells fall below the dark-forest threshold, a
/// noisy coastline for the Narco domain, and seeded landmark placement.
pub fn build_terrain(domain_cfg: &DomainConfig, seed: u64) -> Result<TerrainGrid, SimError> {
    if domain_cfg.scale < 1.0 / 64.0 - 1e-12 {
        return Err(SimError::Config(format!("scale {} below 1/64", domain_cfg.scale)));
    }
    let (width, height) = domain_cfg.dims();
    if width < 8 || height < 8 {
        return Err(SimError::TooSmall { width, height });
    }
    let n = width * height;
    let noise_cell = (domain_cfg.noise_cell * domain_cfg.scale).max(2.0);
    let mut tex_rng = ChaCha8Rng::seed_from_u64(domain_cfg.terrain_seed);
    let coarse = ValueNoise::new(width, height, noise_cell, &mut tex_rng);
    let fine = ValueNoise::new(width, height, noise_cell / 3.0, &mut tex_rng);
    let mut noise = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            noise.push(0.7 * coarse.sample(fx, fy) + 0.3 * fine.sample(fx, fy));
        }
    }

    let mut water = vec![false; n];
    if domain_cfg.kind == DomainKind::Narco {
        let coast = coastline(width, height, &mut tex_rng);
        for y in 0..height {
            for x in 0..width {
                water[y * width + x] = x < coast[y];
            }
        }
    }

    // Piecewise-linear map from noise to forest density putting the
    // `1 - dark_fraction` quantile exactly at the dark-forest threshold.
    let mut sorted: Vec<f64> = noise.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let frac = domain_cfg.dark_forest_fraction;
    let q_idx = (((1.0 - frac) * n as f64) as usize).min(n - 1);
    let q = if frac > 0.0 { sorted[q_idx] } else { hi };
    let f_star = (1.0 - domain_cfg.dark_forest_threshold) / FOREST_OCCLUSION as f64;
    let mut forest = Vec::with_capacity(n);
    let mut visibility = Vec::with_capacity(n);
    for (i, &v) in noise.iter().enumerate() {
        let f = if v <= q {
            if q > lo {
                f_star * (v - lo) / (q - lo) * 0.98
            } else {
                0.0
            }
        } else {
            f_star + (1.0 - f_star) * (v - q) / (hi - q).max(1e-12)
        };
        let f = if domain_cfg.kind == DomainKind::Narco && !water[i] {
            0.0
        } else {
            f.clamp(0.0, 1.0) as f32
        };
        forest.push(f as f32);
        visibility.push(visibility_from_forest(f as f32));
    }

    let mut grid = TerrainGrid {
        domain: domain_cfg.kind,
        width,
        height,
        visibility,
        forest_density: forest,
        water,
        hideouts: Vec::new(),
        rendezvous: Vec::new(),
        adversary_start: Cell::new(0, 0),
        dark_forest_threshold: domain_cfg.dark_forest_threshold,
    };
    if domain_cfg.kind == DomainKind::Prison && !grid.visibility.iter().any(|&v| (v as f64) < domain_cfg.dark_forest_threshold) {
        return Err(SimError::Config("terrain has no dark-forest cells".into()));
    }
    place_landmarks(&mut grid, domain_cfg, seed)?;
    Ok(grid)
}

fn place_landmarks(grid: &mut TerrainGrid, domain_cfg: &DomainConfig, seed: u64) -> Result<(), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6e64_6d61_726b);
    let (w, h) = (grid.width, grid.height);
    let too_small = SimError::TooSmall { width: w, height: h };
    let mut taken: Vec<Cell> = Vec::new();
    let min_gap = (0.05 * w as f64).max(1.5);

    let draw = |rng: &mut ChaCha8Rng,
                    taken: &mut Vec<Cell>,
                    accept: &dyn Fn(Cell) -> bool|
     -> Option<Cell> {
        for _ in 0..20_000 {
            let c = Cell::new(rng.random_range(0..w), rng.random_range(0..h));
            if grid.traversable(c) && accept(c) && taken.iter().all(|t| t.dist(c) >= min_gap) {
                taken.push(c);
                return Some(c);
            }
        }
        None
    };

    let mut hideouts = Vec::new();
    let mut rendezvous = Vec::new();
    let start = match domain_cfg.kind {
        DomainKind::Prison => {
            let start = draw(&mut rng, &mut taken, &|c| {
                let cx = c.x as f64 / w as f64;
                let cy = c.y as f64 / h as f64;
                (0.4..0.6).contains(&cx) && (0.4..0.6).contains(&cy)
            })
            .ok_or(too_small.clone())?;
            let min_d = domain_cfg.hideout_min_distance * w as f64;
            let total = domain_cfg.known_hideouts + domain_cfg.unknown_hideouts;
            for i in 0..total {
                let c = draw(&mut rng, &mut taken, &|c| c.dist(start) >= min_d).ok_or(too_small.clone())?;
                hideouts.push(Hideout {
                    cell: c,
                    known: i < domain_cfg.known_hideouts,
                });
            }
            start
        }
        DomainKind::Narco => {
            let coast_x = |y: usize| (0..w).find(|&x| !grid.water[y * w + x]).unwrap_or(w);
            let start = draw(&mut rng, &mut taken, &|c| (c.x as f64) < 0.3 * w as f64)
                .ok_or(too_small.clone())?;
            for _ in 0..domain_cfg.rendezvous {
                let c = draw(&mut rng, &mut taken, &|c| {
                    let cx = c.x as f64 / w as f64;
                    cx > 0.3 && c.x + (0.08 * w as f64) as usize + 1 < coast_x(c.y)
                })
                .ok_or(too_small.clone())?;
                rendezvous.push(c);
            }
            let min_d = domain_cfg.hideout_min_distance * w as f64;
            let total = domain_cfg.known_hideouts + domain_cfg.unknown_hideouts;
            for i in 0..total {
                let c = draw(&mut rng, &mut taken, &|c| {
                    let cx = coast_x(c.y);
                    c.x + 4 >= cx && c.dist(start) >= min_d
                })
                .ok_or(too_small.clone())?;
                hideouts.push(Hideout {
                    cell: c,
                    known: i < domain_cfg.known_hideouts,
                });
            }
            start
        }
    };
    grid.hideouts = hideouts;
    grid.rendezvous = rendezvous;
    grid.adversary_start = start;
    Ok(())
}

/// Column index of the coastline per row (land at `x >= coast[y]`).
fn coastline(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let knots = 9;
    let vals: Vec<f64> = (0..knots).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..height)
        .map(|y| {
            let t = y as f64 / height.max(2) as f64 * (knots - 1) as f64;
            let i = (t as usize).min(knots - 2);
            let f = smoothstep(t - i as f64);
            let v = vals[i] * (1.0 - f) + vals[i + 1] * f;
            ((0.8 + 0.08 * v) * width as f64) as usize
        })
        .collect()
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise on a square lattice with smoothstep blending.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(width: usize, height: usize, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let lattice = (0..cols * rows).map(|_| rng.random::<f64>()).collect();
        Self { cell, cols, lattice }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx as usize, gy as usize);
        let (fx, fy) = (smoothstep(gx - ix as f64), smoothstep(gy - iy as f64));
        let at = |i: usize, j: usize| self.lattice[j * self.cols + i];
        let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
        let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}
