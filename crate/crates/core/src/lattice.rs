//! Lattice geometry: boxes of `Z^d`, cones, exact and deformed diamonds with
//! their two-ball splits, and the hierarchy of corner subcubes.
//!
//! Everything here works for any dimension `d >= 1`; experiments use `d = 3`.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;

pub type Point = Vec<i64>;

const GEOM_EPS: f64 = 1e-12;

pub fn to_real(p: &[i64]) -> Vec<f64> {
    p.iter().map(|&v| v as f64).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn euclid(a: &[i64], b: &[i64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn l1(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn sup_norm(p: &[i64]) -> i64 {
    p.iter().map(|v| v.abs()).max().unwrap_or(0)
}

/// Finite set of lattice points with the nearest-neighbour graph it induces.
#[derive(Clone, Debug)]
pub struct Region {
    dim: usize,
    points: Vec<Point>,
    index: HashMap<Point, usize>,
    graph: Graph,
}

impl Region {
    pub fn from_points(dim: usize, points: Vec<Point>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(points.len());
        for (k, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(invalid("points", format!("{p:?} has wrong dimension")));
            }
            if index.insert(p.clone(), k).is_some() {
                return Err(invalid("points", format!("{p:?} listed twice")));
            }
        }
        let mut edges = Vec::new();
        for (k, p) in points.iter().enumerate() {
            let mut q = p.clone();
            for c in 0..dim {
                q[c] += 1;
                if let Some(&j) = index.get(&q) {
                    edges.push((k, j));
                }
                q[c] -= 1;
            }
        }
        let graph = Graph::new(points.len(), edges)?;
        Ok(Self {
            dim,
            points,
            index,
            graph,
        })
    }

    /// Axis-aligned cube with `side` points per axis starting at `lower`.
    pub fn cube(lower: &[i64], side: i64) -> Result<Self> {
        if side <= 0 {
            return Err(invalid("side", "cube side must be positive"));
        }
        let pts = grid_points(lower, &vec![side; lower.len()]);
        Self::from_points(lower.len(), pts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    pub fn index_of(&self, p: &[i64]) -> Option<usize> {
        self.index.get(p).copied()
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        self.index.contains_key(p)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Indices (in `self`) of the points of `other`; fails if any is missing.
    pub fn locate(&self, other: &[Point]) -> Result<Vec<usize>> {
        other
            .iter()
            .map(|p| self.index_of(p).ok_or_else(|| Error::OutsideRegion(p.clone())))
            .collect()
    }
}

/// Lexicographic grid `lower + [0, extent)` per axis, first coordinate slowest.
fn grid_points(lower: &[i64], extent: &[i64]) -> Vec<Point> {
    let d = lower.len();
    let total: i64 = extent.iter().product();
    let mut out = Vec::with_capacity(total.max(0) as usize);
    if total <= 0 {
        return out;
    }
    let mut cur = vec![0i64; d];
    loop {
        out.push(lower.iter().zip(&cur).map(|(a, b)| a + b).collect());
        let mut c = d;
        loop {
            if c == 0 {
                return out;
            }
            c -= 1;
            cur[c] += 1;
            if cur[c] < extent[c] {
                break;
            }
            cur[c] = 0;
        }
    }
}

/// The box `V_n = {z in Z^d : |z|_inf <= n}` with its nearest-neighbour edges.
#[derive(Clone, Debug)]
pub struct LatticeBox {
    radius: i64,
    region: Region,
}

impl LatticeBox {
    pub fn new(dim: usize, radius: i64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "dimension must be positive"));
        }
        if radius < 0 {
            return Err(invalid("radius", "radius must be non-negative"));
        }
        let side = 2 * radius + 1;
        let region = Region::from_points(dim, grid_points(&vec![-radius; dim], &vec![side; dim]))?;
        Ok(Self { radius, region })
    }

    pub fn dim(&self) -> usize {
        self.region.dim
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn graph(&self) -> &Graph {
        &self.region.graph
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> &Point {
        self.region.point(i)
    }

    pub fn index_of(&self, p: &[i64]) -> Option<usize> {
        self.region.index_of(p)
    }

    pub fn origin(&self) -> usize {
        self.index_of(&vec![0; self.dim()]).expect("origin in box")
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        sup_norm(self.point(i)) == self.radius
    }

    pub fn boundary(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_boundary(i)).collect()
    }
}

/// Cone half-angle classes used by diamonds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConeAngle {
    /// pi/4
    Wide,
    /// pi/16
    Narrow,
}

impl ConeAngle {
    pub fn radians(self) -> f64 {
        match self {
            ConeAngle::Wide => PI / 4.0,
            ConeAngle::Narrow => PI / 16.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cone {
    apex: Vec<f64>,
    direction: Vec<f64>,
    angle: ConeAngle,
    cos: f64,
    dir_norm: f64,
}

impl Cone {
    pub fn new(apex: Vec<f64>, direction: Vec<f64>, angle: ConeAngle) -> Result<Self> {
        if apex.len() != direction.len() {
            return Err(invalid("direction", "dimension mismatch with apex"));
        }
        let dir_norm = norm(&direction);
        if !(dir_norm > 0.0) || !dir_norm.is_finite() {
            return Err(invalid("direction", "direction must be a nonzero finite vector"));
        }
        Ok(Self {
            apex,
            direction,
            angle,
            cos: angle.radians().cos(),
            dir_norm,
        })
    }

    pub fn apex(&self) -> &[f64] {
        &self.apex
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn angle(&self) -> ConeAngle {
        self.angle
    }

    /// `(z - apex) . l >= cos(angle) |z - apex| |l|`; the apex is a member.
    pub fn contains(&self, z: &[f64]) -> bool {
        let v: Vec<f64> = z.iter().zip(&self.apex).map(|(a, b)| a - b).collect();
        let n = norm(&v);
        if n == 0.0 {
            return true;
        }
        let lhs = dot(&v, &self.direction);
        let rhs = self.cos * n * self.dir_norm;
        lhs >= rhs - GEOM_EPS * n * self.dir_norm
    }

    pub fn contains_point(&self, z: &[i64]) -> bool {
        self.contains(&to_real(z))
    }
}

pub fn cone_contains(cone: &Cone, z: &[f64]) -> bool {
    cone.contains(z)
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiamondKind {
    /// Two `pi/4` cones along `y - x`.
    Exact,
    /// `pi/16` cone at `x` around `direction`, `pi/16` cone at `y` along `x - y`.
    Deformed { direction: Vec<f64> },
}

/// Radii factors of the two balls covering a diamond.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Split {
    pub fx: f64,
    pub fy: f64,
}

impl Split {
    pub const THREE_FIFTHS: Split = Split { fx: 0.6, fy: 0.6 };
    pub const FULL: Split = Split { fx: 1.0, fy: 1.0 };

    pub fn new(fx: f64, fy: f64) -> Result<Self> {
        let lo = 0.2 - GEOM_EPS;
        let hi = 1.0 + GEOM_EPS;
        if !(lo..=hi).contains(&fx) {
            return Err(invalid("f_x", format!("{fx} outside [1/5, 1]")));
        }
        if !(lo..=hi).contains(&fy) {
            return Err(invalid("f_y", format!("{fy} outside [1/5, 1]")));
        }
        if fx + fy < 1.2 - GEOM_EPS {
            return Err(invalid("f_x + f_y", format!("{} below 6/5", fx + fy)));
        }
        Ok(Self { fx, fy })
    }
}

/// A patched cone intersection between apexes `x` and `y`.
#[derive(Clone, Debug)]
pub struct Diamond {
    x: Point,
    y: Point,
    kind: DiamondKind,
    cone_x: Cone,
    cone_y: Cone,
    region: Region,
    patch_points: Vec<Point>,
    split: Split,
}

/// Shortest L1 staircase from `a` to `b` (both included), stepping along the
/// coordinate with the largest remaining displacement, lowest index on ties.
pub fn staircase(a: &[i64], b: &[i64]) -> Vec<Point> {
    let mut cur = a.to_vec();
    let mut out = vec![cur.clone()];
    loop {
        let mut best: Option<(usize, i64)> = None;
        for c in 0..a.len() {
            let r = b[c] - cur[c];
            if r != 0 && best.map_or(true, |(_, br)| r.abs() > br.abs()) {
                best = Some((c, r));
            }
        }
        match best {
            None => return out,
            Some((c, r)) => {
                cur[c] += r.signum();
                out.push(cur.clone());
            }
        }
    }
}

/// Shortest L1 staircase from `a` to `b` that tracks the segment `[a, b]`:
/// each step advances the coordinate with the least fractional progress,
/// lowest index on ties, so every point stays within sup-distance 1 of the
/// segment.
pub fn line_staircase(a: &[i64], b: &[i64]) -> Vec<Point> {
    let total: Vec<i128> = a.iter().zip(b).map(|(x, y)| (y - x).abs() as i128).collect();
    let mut done = vec![0i128; a.len()];
    let mut cur = a.to_vec();
    let mut out = vec![cur.clone()];
    loop {
        let mut best: Option<usize> = None;
        for c in 0..a.len() {
            if done[c] == total[c] {
                continue;
            }
            // done[c]/total[c] < done[k]/total[k]
            if best.map_or(true, |k| done[c] * total[k] < done[k] * total[c]) {
                best = Some(c);
            }
        }
        let Some(c) = best else { return out };
        done[c] += 1;
        cur[c] += (b[c] - a[c]).signum();
        out.push(cur.clone());
    }
}

impl Diamond {
    pub fn x(&self) -> &Point {
        &self.x
    }

    pub fn y(&self) -> &Point {
        &self.y
    }

    pub fn kind(&self) -> &DiamondKind {
        &self.kind
    }

    pub fn is_deformed(&self) -> bool {
        matches!(self.kind, DiamondKind::Deformed { .. })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn members(&self) -> &[Point] {
        self.region.points()
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    pub fn patch_points(&self) -> &[Point] {
        &self.patch_points
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn x_index(&self) -> usize {
        self.region.index_of(&self.x).expect("apex x is a member")
    }

    pub fn y_index(&self) -> usize {
        self.region.index_of(&self.y).expect("apex y is a member")
    }

    pub fn length(&self) -> f64 {
        euclid(&self.x, &self.y)
    }

    /// True when `z` lies in the (continuous) intersection of the two cones.
    pub fn in_cones(&self, z: &[f64]) -> bool {
        self.cone_x.contains(z) && self.cone_y.contains(z)
    }

    pub fn with_split(mut self, fx: f64, fy: f64) -> Result<Self> {
        let split = Split::new(fx, fy)?;
        split_members(&self, split)?;
        self.split = split;
        Ok(self)
    }

    /// `(R^x, R^y)` as member indices for the stored split.
    pub fn sub_regions(&self) -> (Vec<usize>, Vec<usize>) {
        split_members(self, self.split).expect("stored split was validated")
    }

    /// Internal undirected edges as pairs of lattice points.
    pub fn edge_set(&self) -> HashSet<(Point, Point)> {
        self.region
            .graph()
            .edges()
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (self.region.point(i).clone(), self.region.point(j).clone());
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }
}

/// Builds an exact or deformed diamond, patched to be connected.
pub fn build_diamond(x: &[i64], y: &[i64], kind: DiamondKind) -> Result<Diamond> {
    let d = x.len();
    if d == 0 || y.len() != d {
        return Err(invalid("y", "apexes must share a positive dimension"));
    }
    if x == y {
        return Err(invalid("y", "apexes must differ"));
    }
    let xr = to_real(x);
    let yr = to_real(y);
    let yx: Vec<f64> = yr.iter().zip(&xr).map(|(a, b)| a - b).collect();
    let xy: Vec<f64> = yx.iter().map(|v| -v).collect();
    let (cone_x, cone_y, default_split) = match &kind {
        DiamondKind::Exact => (
            Cone::new(xr.clone(), yx.clone(), ConeAngle::Wide)?,
            Cone::new(yr.clone(), xy, ConeAngle::Wide)?,
            Split::FULL,
        ),
        DiamondKind::Deformed { direction } => {
            if direction.len() != d {
                return Err(invalid("direction", "dimension mismatch"));
            }
            let cx = Cone::new(xr.clone(), direction.clone(), ConeAngle::Narrow)?;
            if !cx.contains(&yr) {
                return Err(invalid("y", "y lies outside the deformed cone at x"));
            }
            (cx, Cone::new(yr.clone(), xy, ConeAngle::Narrow)?, Split::THREE_FIFTHS)
        }
    };
    let reach = norm(&yx).ceil() as i64;
    let lower: Vec<i64> = x.iter().map(|v| v - reach).collect();
    let raw: Vec<Point> = grid_points(&lower, &vec![2 * reach + 1; d])
        .into_iter()
        .filter(|z| {
            let zr = to_real(z);
            cone_x.contains(&zr) && cone_y.contains(&zr)
        })
        .collect();
    let (members, patches) = patch_connected(d, raw, x, y)?;
    let region = Region::from_points(d, members)?;
    let mut dia = Diamond {
        x: x.to_vec(),
        y: y.to_vec(),
        kind,
        cone_x,
        cone_y,
        region,
        patch_points: patches,
        split: default_split,
    };
    // Keep the default split only where it covers; fall back to the full split.
    if split_members(&dia, default_split).is_err() {
        dia.split = Split::FULL;
    }
    Ok(dia)
}

fn patch_connected(
    d: usize,
    raw: Vec<Point>,
    x: &[i64],
    y: &[i64],
) -> Result<(Vec<Point>, Vec<Point>)> {
    let mut members: Vec<Point> = raw;
    members.sort();
    let mut patches: Vec<Point> = Vec::new();
    let add_path = |members: &mut Vec<Point>, patches: &mut Vec<Point>, path: Vec<Point>| {
        let set: HashSet<Point> = members.iter().cloned().collect();
        for p in path {
            if !set.contains(&p) && !patches.contains(&p) {
                patches.push(p.clone());
                members.push(p);
            }
        }
        members.sort();
    };
    for apex in [x, y] {
        loop {
            let region = Region::from_points(d, members.clone())?;
            let comp = region.graph().components();
            let ca = comp[region.index_of(apex).expect("apex is a member")];
            let mut sizes = vec![0usize; comp.iter().max().map_or(0, |m| m + 1)];
            for &c in &comp {
                sizes[c] += 1;
            }
            // The apex is cut off when its component is not a largest one.
            if sizes[ca] == *sizes.iter().max().expect("nonempty") {
                break;
            }
            let (_, p) = region
                .points()
                .iter()
                .enumerate()
                .filter(|&(k, _)| comp[k] != ca)
                .map(|(_, p)| (l1(p, apex), p.clone()))
                .min()
                .expect("another component exists");
            add_path(&mut members, &mut patches, staircase(apex, &p));
        }
    }
    // Remaining stray pieces are joined to the component containing x by the
    // closest pair of points.
    loop {
        let region = Region::from_points(d, members.clone())?;
        let comp = region.graph().components();
        let cx = comp[region.index_of(x).expect("apex is a member")];
        let stray = (0..region.len()).find(|&k| comp[k] != cx);
        let Some(s) = stray else { break };
        let cs = comp[s];
        let mut best: Option<(i64, Point, Point)> = None;
        for (i, q) in region.points().iter().enumerate() {
            if comp[i] != cs {
                continue;
            }
            for (j, p) in region.points().iter().enumerate() {
                if comp[j] != cx {
                    continue;
                }
                let cand = (l1(q, p), q.clone(), p.clone());
                if best.as_ref().map_or(true, |b| cand < *b) {
                    best = Some(cand);
                }
            }
        }
        let (_, q, p) = best.expect("both components nonempty");
        add_path(&mut members, &mut patches, staircase(&q, &p));
    }
    Ok((members, patches))
}

fn split_members(dia: &Diamond, split: Split) -> Result<(Vec<usize>, Vec<usize>)> {
    let len = dia.length();
    let rx = split.fx * len * (1.0 + GEOM_EPS);
    let ry = split.fy * len * (1.0 + GEOM_EPS);
    let mut sx = Vec::new();
    let mut sy = Vec::new();
    for (k, z) in dia.members().iter().enumerate() {
        let inx = euclid(z, &dia.x) <= rx;
        let iny = euclid(z, &dia.y) <= ry;
        if inx {
            sx.push(k);
        }
        if iny {
            sy.push(k);
        }
        if !inx && !iny {
            return Err(Error::Geometry(format!(
                "member {z:?} lies in neither ball of the split ({}, {})",
                split.fx, split.fy
            )));
        }
    }
    Ok((sx, sy))
}

/// `(R^x, R^y)` for the split `(f_x, f_y)`, as member indices. Fails on an
/// invalid split or if the two balls do not cover the diamond.
pub fn split_diamond(dia: &Diamond, fx: f64, fy: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    split_members(dia, Split::new(fx, fy)?)
}

/// `r = (z-x).(y-x)/|y-x|^2` and the projection `p = x + r (y-x)`.
pub fn projection_coordinates(x: &[f64], y: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let yx: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let n2 = dot(&yx, &yx);
    if n2 == 0.0 {
        return Err(invalid("y", "x and y must differ"));
    }
    let zx: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
    let r = dot(&zx, &yx) / n2;
    let p = x.iter().zip(&yx).map(|(a, v)| a + r * v).collect();
    Ok((r, p))
}

/// Node of the corner-subcube hierarchy.
#[derive(Clone, Debug)]
pub struct SubcubeNode {
    /// Word over `1..=2^d`; empty for the root.
    pub word: Vec<u16>,
    pub lower: Point,
    /// Points per axis.
    pub side: i64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl SubcubeNode {
    pub fn depth(&self) -> usize {
        self.word.len()
    }

    pub fn points(&self) -> Vec<Point> {
        grid_points(&self.lower, &vec![self.side; self.lower.len()])
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        p.iter()
            .zip(&self.lower)
            .all(|(&v, &lo)| v >= lo && v < lo + self.side)
    }

    pub fn contains_cube(&self, other: &SubcubeNode) -> bool {
        other
            .lower
            .iter()
            .zip(&self.lower)
            .all(|(&o, &lo)| o >= lo && o + other.side <= lo + self.side)
    }
}

/// Euclidean distance between the point sets of two cubes.
pub fn cube_distance(a: &SubcubeNode, b: &SubcubeNode) -> f64 {
    let mut s = 0.0;
    for c in 0..a.lower.len() {
        let (alo, ahi) = (a.lower[c], a.lower[c] + a.side - 1);
        let (blo, bhi) = (b.lower[c], b.lower[c] + b.side - 1);
        let gap = (blo - ahi).max(alo - bhi).max(0) as f64;
        s += gap * gap;
    }
    s.sqrt()
}

/// Hierarchy of corner subcubes of the cube with side `4^n` centred at `z`.
///
/// The root cube spans `z - 4^n/2 .. z + 4^n/2 - 1` per axis (the single point
/// `z` when `n = 0`). Each node of side `s > 1` has `2^d` children: the corner
/// cubes of side `s/4` at offsets `0` and `3s/4` per axis.
#[derive(Clone, Debug)]
pub struct SubcubeTree {
    dim: usize,
    levels: usize,
    nodes: Vec<SubcubeNode>,
}

pub const DEFAULT_TREE_CAP: u128 = 1_000_000;

/// `|T_n|` for the `2^d`-ary hierarchy, saturating at `u128::MAX`.
pub fn tree_count(dim: usize, levels: usize) -> u128 {
    let arity = 1u32 << dim;
    let mut c: u128 = 1;
    for _ in 0..levels {
        let mut p: u128 = 1;
        for _ in 0..arity {
            p = p.saturating_mul(c);
        }
        c = p.saturating_add(1);
    }
    c
}

pub fn subcube_tree(z: &[i64], levels: usize) -> Result<SubcubeTree> {
    let dim = z.len();
    if dim == 0 || dim > 8 {
        return Err(invalid("z", "dimension must be in 1..=8"));
    }
    if levels > 15 {
        return Err(invalid("n", "depth above 15 overflows the cube side"));
    }
    let side = 4i64.pow(levels as u32);
    let lower: Point = z.iter().map(|&v| v - side / 2).collect();
    let mut nodes = vec![SubcubeNode {
        word: Vec::new(),
        lower,
        side,
        parent: None,
        children: Vec::new(),
    }];
    let arity = 1usize << dim;
    let mut frontier = vec![0usize];
    for _ in 0..levels {
        let mut next = Vec::new();
        for &v in &frontier {
            let parent_side = nodes[v].side;
            let child_side = parent_side / 4;
            for k in 0..arity {
                let lower: Point = nodes[v]
                    .lower
                    .iter()
                    .enumerate()
                    .map(|(c, &lo)| lo + if (k >> c) & 1 == 1 { 3 * child_side } else { 0 })
                    .collect();
                let mut word = nodes[v].word.clone();
                word.push(k as u16 + 1);
                let id = nodes.len();
                nodes.push(SubcubeNode {
                    word,
                    lower,
                    side: child_side,
                    parent: Some(v),
                    children: Vec::new(),
                });
                nodes[v].children.push(id);
                next.push(id);
            }
        }
        frontier = next;
    }
    Ok(SubcubeTree { dim, levels, nodes })
}

impl SubcubeTree {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn nodes(&self) -> &[SubcubeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &SubcubeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &SubcubeNode {
        &self.nodes[0]
    }

    pub fn tree_count(&self) -> u128 {
        tree_count(self.dim, self.levels)
    }

    /// Leaf sets `L_T` of all admissible subtrees (every node keeps 0 or all
    /// `2^d` children), as node ids.
    pub fn leaf_sets(&self, cap: u128) -> Result<Vec<Vec<usize>>> {
        let count = self.tree_count();
        if count > cap {
            return Err(Error::EnumerationCap {
                requested: count,
                cap,
            });
        }
        Ok(self.leaf_sets_from(0))
    }

    fn leaf_sets_from(&self, v: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![v]];
        let children = &self.nodes[v].children;
        if children.is_empty() {
            return out;
        }
        let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
        for &c in children {
            let sub = self.leaf_sets_from(c);
            let mut next = Vec::with_capacity(combos.len() * sub.len());
            for base in &combos {
                for s in &sub {
                    let mut b = base.clone();
                    b.extend_from_slice(s);
                    next.push(b);
                }
            }
            combos = next;
        }
        out.extend(combos);
        out
    }
}

/// Writes one point per line, coordinates separated by spaces.
pub fn write_points<W: Write>(mut w: W, points: &[Point]) -> Result<()> {
    for p in points {
        let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_points(text: &str) -> Result<Vec<Point>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|e| invalid("points", format!("{t:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_counts_and_boundary() {
        for d in 1..=3 {
            for n in 0..=2 {
                let b = LatticeBox::new(d, n).unwrap();
                assert_eq!(b.len() as i64, (2 * n + 1).pow(d as u32));
                for &(i, j) in b.graph().edges() {
                    assert_eq!(l1(b.point(i), b.point(j)), 1);
                }
                for i in 0..b.len() {
                    assert_eq!(b.is_boundary(i), sup_norm(b.point(i)) == n);
                }
                // d (2n+1)^(d-1) (2n) edges
                let s = 2 * n + 1;
                assert_eq!(b.graph().edge_count() as i64, d as i64 * s.pow(d as u32 - 1) * (s - 1));
            }
        }
        assert!(LatticeBox::new(0, 1).is_err());
        assert!(LatticeBox::new(2, -1).is_err());
    }

    #[test]
    fn cone_membership() {
        let c = Cone::new(vec![0.0; 3], vec![1.0, 0.0, 0.0], ConeAngle::Wide).unwrap();
        assert!(c.contains(&[1.0, 1.0, 0.0]));
        assert!(c.contains(&[0.0, 0.0, 0.0]));
        assert!(!c.contains(&[1.0, 1.0001, 0.0]));
        let n = Cone::new(vec![0.0; 3], vec![1.0, 0.0, 0.0], ConeAngle::Narrow).unwrap();
        assert!(!n.contains(&[1.0, 1.0, 0.0]));
        assert!(n.contains(&[5.0, 0.99, 0.0]));
        assert!(Cone::new(vec![0.0; 2], vec![0.0; 2], ConeAngle::Wide).is_err());
    }

    #[test]
    fn exact_diamond_axis() {
        let d = build_diamond(&[0, 0, 0], &[10, 0, 0], DiamondKind::Exact).unwrap();
        assert!(d.region().graph().is_connected());
        for p in [[0, 0, 0], [10, 0, 0], [5, 3, 0], [5, -3, 0], [5, 5, 0]] {
            assert!(d.region().contains(&p), "{p:?}");
        }
        assert!(!d.region().contains(&[5, 6, 0]));
        assert!(d.patch_points().is_empty());
    }

    #[test]
    fn adjacent_apexes() {
        let d = build_diamond(&[0, 0, 0], &[1, 0, 0], DiamondKind::Exact).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.region().graph().is_connected());
    }

    #[test]
    fn deformed_requires_y_in_cone() {
        let err = build_diamond(
            &[0, 0, 0],
            &[10, 5, 0],
            DiamondKind::Deformed {
                direction: vec![1.0, 0.0, 0.0],
            },
        );
        assert!(err.is_err());
        assert!(build_diamond(&[0, 0], &[0, 0], DiamondKind::Exact).is_err());
    }

    #[test]
    fn oblique_deformed_diamond_is_patched() {
        let d = build_diamond(
            &[0, 0, 0],
            &[7, 3, 1],
            DiamondKind::Deformed {
                direction: vec![7.0, 3.0, 1.0],
            },
        )
        .unwrap();
        assert!(d.region().graph().is_connected());
        assert!(!d.patch_points().is_empty());
    }

    #[test]
    fn split_constraints() {
        let d = build_diamond(
            &[0, 0, 0],
            &[20, 0, 0],
            DiamondKind::Deformed {
                direction: vec![1.0, 0.0, 0.0],
            },
        )
        .unwrap();
        let (sx, sy) = split_diamond(&d, 0.6, 0.6).unwrap();
        let mut all: Vec<usize> = sx.iter().chain(&sy).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), d.len());
        let (fx, fy) = split_diamond(&d, 1.0, 1.0).unwrap();
        assert_eq!(fx.len(), d.len());
        assert_eq!(fy.len(), d.len());
        assert!(split_diamond(&d, 0.1, 1.0).is_err());
        assert!(split_diamond(&d, 0.5, 0.5).is_err());
    }

    #[test]
    fn split_cover_failure_is_reported() {
        let d = build_diamond(&[0, 0, 0], &[20, 0, 0], DiamondKind::Exact).unwrap();
        assert!(matches!(split_diamond(&d, 0.6, 0.6), Err(Error::Geometry(_))));
    }

    #[test]
    fn projection() {
        let (r, p) = projection_coordinates(&[0.0; 3], &[2.0, 0.0, 0.0], &[1.0, 5.0, 0.0]).unwrap();
        assert_eq!(r, 0.5);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let (r, p) = projection_coordinates(&[1.0, 2.0], &[3.0, 5.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r, p), (0.0, vec![1.0, 2.0]));
        let (r, p) = projection_coordinates(&[1.0, 2.0], &[3.0, 5.0], &[3.0, 5.0]).unwrap();
        assert_eq!((r, p), (1.0, vec![3.0, 5.0]));
        assert!(projection_coordinates(&[1.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn subcube_small_cases() {
        let t0 = subcube_tree(&[0, 0, 0], 0).unwrap();
        assert_eq!(t0.nodes().len(), 1);
        assert_eq!(t0.root().points(), vec![vec![0, 0, 0]]);
        assert_eq!(t0.leaf_sets(DEFAULT_TREE_CAP).unwrap(), vec![vec![0]]);

        let t1 = subcube_tree(&[0, 0, 0], 1).unwrap();
        assert_eq!(t1.root().children.len(), 8);
        assert_eq!(t1.leaf_sets(DEFAULT_TREE_CAP).unwrap().len(), 2);
        assert_eq!(tree_count(3, 2), 257);
        let t3 = subcube_tree(&[0, 0, 0], 3).unwrap();
        assert!(matches!(t3.leaf_sets(DEFAULT_TREE_CAP), Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn staircase_is_shortest() {
        let s = staircase(&[0, 0, 0], &[3, -2, 1]);
        assert_eq!(s.len() as i64, 1 + 6);
        for w in s.windows(2) {
            assert_eq!(l1(&w[0], &w[1]), 1);
        }
    }

    #[test]
    fn point_text_roundtrip() {
        let pts = vec![vec![1, -2, 3], vec![0, 0, 0]];
        let mut buf = Vec::new();
        write_points(&mut buf, &pts).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1 -2 3\n0 0 0\n");
        assert_eq!(read_points(std::str::from_utf8(&buf).unwrap()).unwrap(), pts);
    }
}
