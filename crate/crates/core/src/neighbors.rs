//! Observation orderings and nearest-preceding-neighbor sets.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{squared_distance, SpatialDataset};

/// Below this many points neighbor search is brute force.
pub const BRUTE_FORCE_LIMIT: usize = 5_000;

// While few points are inserted the grid is mostly empty and shell expansion
// is slower than a scan.
const GRID_WARMUP: usize = 1_024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingScheme {
    AsGiven,
    CoordinateSum,
    MaxMin,
    Random(u64),
}

impl fmt::Display for OrderingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingScheme::AsGiven => f.write_str("as-given"),
            OrderingScheme::CoordinateSum => f.write_str("coordinate-sum"),
            OrderingScheme::MaxMin => f.write_str("maxmin"),
            OrderingScheme::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

impl FromStr for OrderingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "as-given" | "asgiven" | "identity" => Ok(OrderingScheme::AsGiven),
            "coordinate-sum" | "coordsum" => Ok(OrderingScheme::CoordinateSum),
            "maxmin" => Ok(OrderingScheme::MaxMin),
            _ => match s.strip_prefix("random:") {
                Some(seed) => seed
                    .parse()
                    .map(OrderingScheme::Random)
                    .map_err(|_| Error::input(format!("bad seed in ordering '{s}'"))),
                None => Err(Error::input(format!("unknown ordering scheme '{s}'"))),
            },
        }
    }
}

/// Permutation `perm` with `perm[k]` = original row placed at position `k`.
pub fn order_observations(data: &SpatialDataset, scheme: OrderingScheme) -> Vec<usize> {
    let n = data.n();
    let mut perm: Vec<usize> = (0..n).collect();
    match scheme {
        OrderingScheme::AsGiven => {}
        OrderingScheme::CoordinateSum => {
            let key = |i: usize| data.location(i).iter().sum::<f64>();
            perm.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
        }
        OrderingScheme::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            perm.shuffle(&mut rng);
        }
        OrderingScheme::MaxMin => perm = maxmin_order(data),
    }
    perm
}

fn maxmin_order(data: &SpatialDataset) -> Vec<usize> {
    let n = data.n();
    let d = data.dim();
    let mut centroid = vec![0.0; d];
    for i in 0..n {
        for (c, x) in centroid.iter_mut().zip(data.location(i)) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);

    // strict comparisons keep the smallest index on ties
    let mut first = 0;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let d2 = squared_distance(data.location(i), &centroid);
        if d2 < best {
            best = d2;
            first = i;
        }
    }

    let mut perm = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut next = first;
    for _ in 0..n {
        perm.push(next);
        placed[next] = true;
        let p = data.location(next).to_vec();
        let mut arg = usize::MAX;
        let mut far = -1.0;
        for i in 0..n {
            if placed[i] {
                continue;
            }
            let d2 = squared_distance(data.location(i), &p);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > far {
                far = min_d2[i];
                arg = i;
            }
        }
        next = arg;
    }
    perm
}

/// Ordered neighbor sets: entry `i` holds up to `M` positions `< i`, sorted
/// by (distance, position).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    perm: Vec<usize>,
    scheme: OrderingScheme,
    max_neighbors: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn max_neighbors(&self) -> usize {
        self.max_neighbors
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn scheme(&self) -> OrderingScheme {
        self.scheme
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Order `data` with `scheme` and build neighbor sets on the result.
    /// Returns the graph and the reordered dataset.
    pub fn build(
        data: &SpatialDataset,
        scheme: OrderingScheme,
        max_neighbors: usize,
    ) -> Result<(NeighborGraph, SpatialDataset)> {
        let perm = order_observations(data, scheme);
        let ordered = data.permuted(&perm);
        let mut graph = build_neighbor_sets(&ordered, max_neighbors)?;
        graph.perm = perm;
        graph.scheme = scheme;
        Ok((graph, ordered))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# neighbor graph\n");
        out.push_str(&format!("n = {}\nm = {}\nscheme = {}\n", self.n(), self.max_neighbors, self.scheme));
        for i in 0..self.n() {
            let nb: Vec<String> = self.neighbors(i).iter().map(|j| j.to_string()).collect();
            out.push_str(&format!("{},{},{}\n", i, self.perm[i], nb.join(" ")));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<NeighborGraph> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut header = std::collections::HashMap::new();
        let mut perm = Vec::new();
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            let fields: Vec<&str> = line.splitn(3, ',').collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, lineno + 1, "expected 'position,original,neighbors'"));
            }
            let pos: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad position"))?;
            if pos != perm.len() {
                return Err(Error::parse(path, lineno + 1, "positions must be consecutive"));
            }
            perm.push(
                fields[1]
                    .parse()
                    .map_err(|_| Error::parse(path, lineno + 1, "bad original index"))?,
            );
            for tok in fields[2].split_whitespace() {
                let j: usize = tok
                    .parse()
                    .map_err(|_| Error::parse(path, lineno + 1, "bad neighbor index"))?;
                if j >= pos {
                    return Err(Error::parse(path, lineno + 1, "neighbor does not precede observation"));
                }
                indices.push(j);
            }
            offsets.push(indices.len());
        }
        let get = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| Error::parse(path, 0, format!("missing header '{k}'")))
        };
        let n: usize = get("n")?.parse().map_err(|_| Error::parse(path, 0, "bad n"))?;
        let max_neighbors: usize = get("m")?.parse().map_err(|_| Error::parse(path, 0, "bad m"))?;
        let scheme: OrderingScheme = get("scheme")?.parse()?;
        if n != perm.len() {
            return Err(Error::parse(path, 0, format!("header says n = {n}, found {} rows", perm.len())));
        }
        Ok(NeighborGraph {
            perm,
            scheme,
            max_neighbors,
            offsets,
            indices,
        })
    }
}

/// Neighbor sets on already-ordered locations; the graph's permutation is the
/// identity.
pub fn build_neighbor_sets(ordered: &SpatialDataset, max_neighbors: usize) -> Result<NeighborGraph> {
    if max_neighbors < 1 {
        return Err(Error::input("neighbor count M must be at least 1"));
    }
    let n = ordered.n();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(n * max_neighbors);
    offsets.push(0);
    let mut nearest = KNearest::new(max_neighbors);
    if n < BRUTE_FORCE_LIMIT || ordered.dim() > GridIndex::MAX_DIM {
        for i in 0..n {
            nearest.clear();
            let q = ordered.location(i);
            for j in 0..i {
                nearest.offer(squared_distance(q, ordered.location(j)), j);
            }
            indices.extend(nearest.items.iter().map(|&(_, j)| j));
            offsets.push(indices.len());
        }
    } else {
        let mut grid = GridIndex::new(ordered.locations(), ordered.dim());
        for i in 0..n {
            if i < GRID_WARMUP {
                nearest.clear();
                let q = ordered.location(i);
                for j in 0..i {
                    nearest.offer(squared_distance(q, ordered.location(j)), j);
                }
            } else {
                grid.nearest(ordered.location(i), ordered.locations(), &mut nearest);
            }
            indices.extend(nearest.items.iter().map(|&(_, j)| j));
            offsets.push(indices.len());
            grid.insert(i, ordered.location(i));
        }
    }
    Ok(NeighborGraph {
        perm: (0..n).collect(),
        scheme: OrderingScheme::AsGiven,
        max_neighbors,
        offsets,
        indices,
    })
}

/// Nearest `k` reference points to each query (no ordering constraint). Ties
/// go to the smaller reference index.
pub fn nearest_reference_points(reference: &SpatialDataset, queries: &[f64], k: usize) -> Vec<Vec<usize>> {
    let dim = reference.dim();
    let nq = queries.len() / dim;
    let mut nearest = KNearest::new(k);
    let mut out = Vec::with_capacity(nq);
    if reference.n() < 256 || dim > GridIndex::MAX_DIM {
        for q in queries.chunks(dim) {
            nearest.clear();
            for j in 0..reference.n() {
                nearest.offer(squared_distance(q, reference.location(j)), j);
            }
            out.push(nearest.items.iter().map(|&(_, j)| j).collect());
        }
    } else {
        let mut grid = GridIndex::new(reference.locations(), dim);
        for j in 0..reference.n() {
            grid.insert(j, reference.location(j));
        }
        for q in queries.chunks(dim) {
            grid.nearest(q, reference.locations(), &mut nearest);
            out.push(nearest.items.iter().map(|&(_, j)| j).collect());
        }
    }
    out
}

/// Bounded sorted candidate list keyed by (squared distance, index).
struct KNearest {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl KNearest {
    fn new(k: usize) -> Self {
        KNearest {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn clear(&mut self) {
        self.items.clear();
    }

    fn full(&self) -> bool {
        self.items.len() == self.k
    }

    fn worst(&self) -> f64 {
        self.items.last().map_or(f64::INFINITY, |x| x.0)
    }

    #[inline]
    fn offer(&mut self, d2: f64, j: usize) {
        if self.full() {
            let (wd, wj) = self.items[self.k - 1];
            if d2 > wd || (d2 == wd && j > wj) {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| d < d2 || (d == d2 && i < j));
        self.items.insert(pos, (d2, j));
        if self.items.len() > self.k {
            self.items.pop();
        }
    }
}

/// Uniform grid over the bounding box, filled incrementally.
struct GridIndex {
    dim: usize,
    lo: Vec<f64>,
    cell: f64,
    shape: Vec<usize>,
    cells: Vec<Vec<usize>>,
}

impl GridIndex {
    const MAX_DIM: usize = 3;

    fn new(locations: &[f64], dim: usize) -> Self {
        let n = locations.len() / dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in locations.chunks(dim) {
            for a in 0..dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..dim).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-300);
        let per_axis = ((n as f64 / 2.0).powf(1.0 / dim as f64)).ceil().max(1.0);
        let cell = extent / per_axis;
        let shape: Vec<usize> = (0..dim)
            .map(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1)
            .collect();
        let total = shape.iter().product();
        GridIndex {
            dim,
            lo,
            cell,
            shape,
            cells: vec![Vec::new(); total],
        }
    }

    fn coords(&self, p: &[f64]) -> Vec<isize> {
        (0..self.dim)
            .map(|a| {
                let c = ((p[a] - self.lo[a]) / self.cell).floor() as isize;
                c.clamp(0, self.shape[a] as isize - 1)
            })
            .collect()
    }

    fn flat(&self, c: &[isize]) -> usize {
        let mut k = 0;
        for a in 0..self.dim {
            k = k * self.shape[a] + c[a] as usize;
        }
        k
    }

    fn insert(&mut self, j: usize, p: &[f64]) {
        let c = self.coords(p);
        let k = self.flat(&c);
        self.cells[k].push(j);
    }

    fn nearest(&self, q: &[f64], locations: &[f64], out: &mut KNearest) {
        out.clear();
        let center = self.coords(q);
        let max_r = self.shape.iter().copied().max().unwrap_or(1) as isize;
        let mut offset = vec![0isize; self.dim];
        let mut cell = vec![0isize; self.dim];
        for r in 0..=max_r {
            // every offset in [-r, r]^d with Chebyshev norm exactly r
            let side = 2 * r + 1;
            let count = (side as usize).pow(self.dim as u32);
            for code in 0..count {
                let mut rem = code;
                let mut on_shell = false;
                let mut inside = true;
                for a in 0..self.dim {
                    offset[a] = (rem % side as usize) as isize - r;
                    rem /= side as usize;
                    on_shell |= offset[a].abs() == r;
                    cell[a] = center[a] + offset[a];
                    inside &= cell[a] >= 0 && cell[a] < self.shape[a] as isize;
                }
                if !on_shell || !inside {
                    continue;
                }
                for &j in &self.cells[self.flat(&cell)] {
                    out.offer(squared_distance(q, &locations[j * self.dim..(j + 1) * self.dim]), j);
                }
            }
            let bound = r as f64 * self.cell;
            if out.full() && out.worst() < bound * bound {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dataset(locs: Vec<f64>, dim: usize) -> SpatialDataset {
        let n = locs.len() / dim;
        SpatialDataset::with_intercept(dim, locs, vec![0.0; n], &[], 0, None).unwrap()
    }

    fn random_dataset(n: usize, seed: u64) -> SpatialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dataset((0..2 * n).map(|_| rng.random::<f64>()).collect(), 2)
    }

    /// O(n^2) oracle: sort every preceding point by (distance, index).
    fn brute_force(ds: &SpatialDataset, m: usize) -> Vec<Vec<usize>> {
        (0..ds.n())
            .map(|i| {
                let mut c: Vec<(f64, usize)> =
                    (0..i).map(|j| (squared_distance(ds.location(i), ds.location(j)), j)).collect();
                c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                c.into_iter().take(m).map(|x| x.1).collect()
            })
            .collect()
    }

    #[test]
    fn as_given_is_identity() {
        let ds = random_dataset(17, 1);
        assert_eq!(order_observations(&ds, OrderingScheme::AsGiven), (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn maxmin_unit_square_corners() {
        let ds = dataset(vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2);
        let perm = order_observations(&ds, OrderingScheme::MaxMin);
        assert_eq!(perm[0], 0);
        assert_eq!(perm[1], 3);
    }

    #[test]
    fn random_ordering_is_seeded() {
        let ds = random_dataset(50, 2);
        let a = order_observations(&ds, OrderingScheme::Random(9));
        assert_eq!(a, order_observations(&ds, OrderingScheme::Random(9)));
        assert_ne!(a, order_observations(&ds, OrderingScheme::Random(10)));
    }

    #[test]
    fn collinear_example() {
        let ds = dataset(vec![0.0, 1.0, 2.0, 3.0], 1);
        let g = build_neighbor_sets(&ds, 2).unwrap();
        assert!(g.neighbors(0).is_empty());
        assert_eq!(g.neighbors(1), &[0]);
        let mut n4 = g.neighbors(3).to_vec();
        n4.sort();
        assert_eq!(n4, vec![1, 2]);
    }

    #[test]
    fn full_conditioning_when_m_large() {
        let ds = random_dataset(12, 4);
        let g = build_neighbor_sets(&ds, 11).unwrap();
        for i in 0..12 {
            let mut nb = g.neighbors(i).to_vec();
            nb.sort();
            assert_eq!(nb, (0..i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_neighbors_rejected() {
        assert!(build_neighbor_sets(&random_dataset(3, 0), 0).is_err());
    }

    #[test]
    fn brute_force_agreement_with_ties() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // integer lattice points produce many distance ties
            let mut pts = std::collections::BTreeSet::new();
            while pts.len() < 300 {
                pts.insert((rng.random_range(0..30i32), rng.random_range(0..30i32)));
            }
            let mut locs: Vec<(i32, i32)> = pts.into_iter().collect();
            locs.shuffle(&mut rng);
            let ds = dataset(locs.iter().flat_map(|&(a, b)| [a as f64, b as f64]).collect(), 2);
            let g = build_neighbor_sets(&ds, 7).unwrap();
            let oracle = brute_force(&ds, 7);
            for i in 0..ds.n() {
                assert_eq!(g.neighbors(i), oracle[i].as_slice(), "seed {seed} obs {i}");
            }
        }
    }

    #[test]
    fn grid_search_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = BRUTE_FORCE_LIMIT + 500;
        // mix continuous points with lattice duplicates in distance
        let locs: Vec<f64> = (0..n)
            .flat_map(|k| {
                if k % 3 == 0 {
                    [(k / 3 % 97) as f64 * 0.01 + 0.001, (k / 3 / 97) as f64 * 0.01 + 0.002]
                } else {
                    [rng.random::<f64>(), rng.random::<f64>()]
                }
            })
            .collect();
        let ds = dataset(locs, 2);
        let g = build_neighbor_sets(&ds, 10).unwrap();
        // brute-force a sample of rows (full O(n^2) sort is slow)
        for i in (0..n).step_by(37).chain(n - 5..n) {
            let mut c: Vec<(f64, usize)> =
                (0..i).map(|j| (squared_distance(ds.location(i), ds.location(j)), j)).collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = c.into_iter().take(10).map(|x| x.1).collect();
            assert_eq!(g.neighbors(i), want.as_slice(), "obs {i}");
        }
    }

    #[test]
    fn reference_knn_matches_brute_force() {
        let train = random_dataset(900, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let queries: Vec<f64> = (0..2 * 60).map(|_| rng.random::<f64>()).collect();
        let got = nearest_reference_points(&train, &queries, 8);
        for (q, nb) in queries.chunks(2).zip(&got) {
            let mut c: Vec<(f64, usize)> =
                (0..train.n()).map(|j| (squared_distance(q, train.location(j)), j)).collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = c.into_iter().take(8).map(|x| x.1).collect();
            assert_eq!(nb, &want);
        }
    }

    #[test]
    fn maxmin_radii_nonincreasing() {
        let ds = random_dataset(300, 8);
        let perm = order_observations(&ds, OrderingScheme::MaxMin);
        let mut sorted = perm.clone();
        sorted.sort();
        assert_eq!(sorted, (0..300).collect::<Vec<_>>());
        let radius = |k: usize| {
            (0..k)
                .map(|j| squared_distance(ds.location(perm[k]), ds.location(perm[j])))
                .fold(f64::INFINITY, f64::min)
        };
        for k in 1..299 {
            assert!(radius(k) >= radius(k + 1), "position {k}");
        }
    }

    #[test]
    fn graph_file_round_trip() {
        let ds = random_dataset(40, 12);
        let (g, _) = NeighborGraph::build(&ds, OrderingScheme::MaxMin, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.txt");
        g.write(&path).unwrap();
        assert_eq!(NeighborGraph::read(&path).unwrap(), g);
    }
}
