use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{FaultSpec, Line, Network};
use crate::{Error, Result};

/// One half of a line split at a fault point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSection {
    pub from_bus: usize,
    pub to_bus: usize,
    pub series_impedance: Complex64,
    pub charging_susceptance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitLine {
    /// Section from the line's `from_bus` to the midpoint.
    pub near: LineSection,
    /// Section from the midpoint to the line's `to_bus`.
    pub far: LineSection,
    pub midpoint_bus: usize,
}

/// Splits `line` at `fraction` of its length (measured from `from_bus`).
/// Series impedance and charging are apportioned linearly.
pub fn split_line(line: &Line, fraction: f64, midpoint_bus: usize) -> Result<SplitLine> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} outside (0, 1)")));
    }
    let z1 = line.series_impedance * fraction;
    // Computing the far section as a difference keeps z1 + z2 == z.
    let z2 = line.series_impedance - z1;
    let b1 = line.charging_susceptance * fraction;
    let b2 = line.charging_susceptance - b1;
    Ok(SplitLine {
        near: LineSection {
            from_bus: line.from_bus,
            to_bus: midpoint_bus,
            series_impedance: z1,
            charging_susceptance: b1,
        },
        far: LineSection {
            from_bus: midpoint_bus,
            to_bus: line.to_bus,
            series_impedance: z2,
            charging_susceptance: b2,
        },
        midpoint_bus,
    })
}

/// Which network topology a matrix is built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Prefault,
    Faulted(FaultSpec),
    Postfault(FaultSpec),
}

impl Topology {
    pub fn removed_line(&self) -> Option<usize> {
        match self {
            Topology::Postfault(f) => Some(f.line_index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Admittance {
    pub matrix: DMatrix<Complex64>,
    /// Appended fault bus, present only for the faulted topology.
    pub midpoint_bus: Option<usize>,
    /// The topology splits the network into more than one island.
    pub islanded: bool,
}

fn stamp_branch(y: &mut DMatrix<Complex64>, i: usize, j: usize, z: Complex64, b: f64) {
    let ys = z.inv();
    let half = Complex64::new(0.0, b / 2.0);
    y[(i, i)] += ys + half;
    y[(j, j)] += ys + half;
    y[(i, j)] -= ys;
    y[(j, i)] -= ys;
}

/// Bus admittance matrix of the transmission network (lines, transformers,
/// bus shunts, and for the faulted state the fault shunt).
pub fn build_admittance(network: &Network, topology: Topology) -> Result<Admittance> {
    let n = network.bus_count();
    let (dim, fault) = match topology {
        Topology::Prefault => (n, None),
        Topology::Faulted(f) => {
            network.validate_fault(&f)?;
            (n + 1, Some(f))
        }
        Topology::Postfault(f) => {
            network.validate_fault(&f)?;
            (n, Some(f))
        }
    };
    let mut y = DMatrix::<Complex64>::zeros(dim, dim);
    for bus in &network.buses {
        y[(bus.id, bus.id)] += bus.shunt;
    }
    for (idx, line) in network.lines.iter().enumerate() {
        if fault.is_some_and(|f| f.line_index == idx) {
            continue;
        }
        stamp_branch(&mut y, line.from_bus, line.to_bus, line.series_impedance, line.charging_susceptance);
    }
    let mut midpoint_bus = None;
    if let Topology::Faulted(f) = topology {
        let split = split_line(&network.lines[f.line_index], f.location_fraction, n)?;
        for s in [split.near, split.far] {
            stamp_branch(&mut y, s.from_bus, s.to_bus, s.series_impedance, s.charging_susceptance);
        }
        y[(n, n)] += f.fault_admittance;
        midpoint_bus = Some(n);
    }
    let islanded = !network.is_connected(topology.removed_line());
    if islanded {
        log::debug!("topology {topology:?} islands the network");
    }
    Ok(Admittance { matrix: y, midpoint_bus, islanded })
}

/// Dense symmetric 0/1 adjacency matrix over buses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    edges: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self { n, edges: vec![false; n * n] }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj = Self::empty(n);
        for (i, j) in edges {
            adj.connect(i, j);
        }
        adj
    }

    /// Adjacency of `network` with the line `removed` taken out, if any.
    pub fn for_network(network: &Network, removed: Option<usize>) -> Self {
        Self::from_edges(
            network.bus_count(),
            network
                .lines
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != removed)
                .map(|(_, l)| (l.from_bus, l.to_bus)),
        )
    }

    pub fn connect(&mut self, i: usize, j: usize) {
        if i != j {
            self.edges[i * self.n + j] = true;
            self.edges[j * self.n + i] = true;
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges[i * self.n..(i + 1) * self.n].iter().filter(|&&e| e).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges[i * self.n..(i + 1) * self.n]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(j, _)| j)
    }

    /// Row-normalized adjacency; rows of isolated nodes are zero.
    pub fn mean_operator(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let d = self.degree(i);
            if d == 0 {
                continue;
            }
            let w = 1.0 / d as f64;
            for j in self.neighbors(i) {
                out[i * n + j] = w;
            }
        }
        out
    }

    /// Row-major 0/1 values.
    pub fn to_f32(&self) -> Vec<f32> {
        self.edges.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect()
    }

    pub fn from_values(n: usize, values: &[f32]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("adjacency needs {} values, got {}", n * n, values.len())));
        }
        let edges: Vec<bool> = values.iter().map(|&v| v != 0.0).collect();
        let adj = Self { n, edges };
        for i in 0..n {
            if adj.get(i, i) {
                return Err(Error::Format("adjacency has a self-loop".into()));
            }
            for j in 0..i {
                if adj.get(i, j) != adj.get(j, i) {
                    return Err(Error::Format("adjacency is not symmetric".into()));
                }
            }
        }
        Ok(adj)
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::empty(self.n);
        for i in 0..self.n {
            for j in self.neighbors(i) {
                out.connect(perm[i], perm[j]);
            }
        }
        out
    }
}

/// Pre-fault bus adjacency of `network`.
pub fn adjacency_from_network(network: &Network) -> Adjacency {
    Adjacency::for_network(network, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_network, BusKind};
    use proptest::prelude::*;

    fn line(z: Complex64) -> Line {
        Line { from_bus: 0, to_bus: 1, series_impedance: z, charging_susceptance: 0.4, has_transformer: false }
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn split_half() {
        let s = split_line(&line(Complex64::new(0.02, 0.2)), 0.5, 2).unwrap();
        assert!(close(s.near.series_impedance, Complex64::new(0.01, 0.1), 1e-15));
        assert!(close(s.far.series_impedance, Complex64::new(0.01, 0.1), 1e-15));
        assert_eq!(s.near.to_bus, 2);
        assert_eq!(s.far.from_bus, 2);
        assert!((s.near.charging_susceptance - 0.2).abs() < 1e-15);
    }

    #[test]
    fn split_tenth() {
        let s = split_line(&line(Complex64::new(0.02, 0.2)), 0.1, 2).unwrap();
        assert!(close(s.near.series_impedance, Complex64::new(0.002, 0.02), 1e-15));
        assert!(close(s.far.series_impedance, Complex64::new(0.018, 0.18), 1e-15));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(split_line(&line(Complex64::new(0.02, 0.2)), f, 2).is_err());
        }
    }

    proptest! {
        #[test]
        fn split_conserves_impedance(r in 0.0f64..0.1, x in 1e-4f64..1.0, f in 1e-3f64..0.999) {
            let z = Complex64::new(r, x);
            let s = split_line(&line(z), f, 2).unwrap();
            let sum = s.near.series_impedance + s.far.series_impedance;
            prop_assert!((sum - z).norm() <= 1e-12);
        }
    }

    const TWO_BUS: &str = "BUS\n0, 345, slack, 0, 0\n1, 345, pq, 0, 0\nLINE\n0, 1, 0.01, 0.1, 0, 0\nGEN\n0, 5, 1, 0.2, 0, 1\n";

    #[test]
    fn two_bus_matrix() {
        let net = parse_network(TWO_BUS).unwrap();
        let y = build_admittance(&net, Topology::Prefault).unwrap().matrix;
        let ys = Complex64::new(0.01, 0.1).inv();
        assert!(close(y[(0, 0)], ys, 1e-12));
        assert!(close(y[(1, 1)], ys, 1e-12));
        assert!(close(y[(0, 1)], -ys, 1e-12));
        assert!(close(y[(1, 0)], -ys, 1e-12));
    }

    #[test]
    fn shunts_only_is_diagonal() {
        let mut net = parse_network(TWO_BUS).unwrap();
        net.lines.clear();
        net.buses[0].shunt = Complex64::new(0.1, 0.2);
        net.buses[1].shunt = Complex64::new(0.0, -0.5);
        let y = build_admittance(&net, Topology::Prefault).unwrap();
        assert_eq!(y.matrix[(0, 0)], net.buses[0].shunt);
        assert_eq!(y.matrix[(1, 1)], net.buses[1].shunt);
        assert_eq!(y.matrix[(0, 1)], Complex64::new(0.0, 0.0));
        assert!(y.islanded);
    }

    /// Independent accumulation: walk every component and add each matrix
    /// entry it touches, using the textbook pi-model formulas.
    fn stamp_sum_oracle(net: &Network) -> Vec<Vec<Complex64>> {
        let n = net.buses.len();
        let mut m = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for b in &net.buses {
            m[b.id][b.id] += b.shunt;
        }
        for l in &net.lines {
            let (r, x) = (l.series_impedance.re, l.series_impedance.im);
            let d = r * r + x * x;
            let g = r / d;
            let bser = -x / d;
            for (a, c) in [(l.from_bus, l.to_bus), (l.to_bus, l.from_bus)] {
                m[a][a] += Complex64::new(g, bser + l.charging_susceptance * 0.5);
                m[a][c] -= Complex64::new(g, bser);
            }
        }
        m
    }

    #[test]
    fn ne39_prefault_matches_stamp_sum() {
        let net = Network::new_england_39();
        let y = build_admittance(&net, Topology::Prefault).unwrap().matrix;
        let oracle = stamp_sum_oracle(&net);
        for i in 0..39 {
            for j in 0..39 {
                assert!(close(y[(i, j)], oracle[i][j], 1e-9 * (1.0 + oracle[i][j].norm())), "({i},{j})");
            }
        }
    }

    fn max_asymmetry(y: &DMatrix<Complex64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                worst = worst.max((y[(i, j)] - y[(j, i)]).norm());
            }
        }
        worst
    }

    #[test]
    fn matrices_symmetric_and_recover_prefault() {
        let net = Network::new_england_39();
        let pre = build_admittance(&net, Topology::Prefault).unwrap();
        assert_eq!(max_asymmetry(&pre.matrix), 0.0);
        for &li in &net.fault_eligible_lines() {
            let fault = FaultSpec::bolted(li, 0.3);
            let faulted = build_admittance(&net, Topology::Faulted(fault)).unwrap();
            let post = build_admittance(&net, Topology::Postfault(fault)).unwrap();
            assert_eq!(faulted.matrix.nrows(), 40);
            assert_eq!(post.matrix.nrows(), 39);
            assert!(max_asymmetry(&faulted.matrix) <= 1e-14);
            assert!(max_asymmetry(&post.matrix) <= 1e-14);

            // Strip the two sections and the fault shunt from the faulted matrix.
            let l = &net.lines[li];
            let split = split_line(l, 0.3, 39).unwrap();
            let mut stripped = faulted.matrix.view((0, 0), (39, 39)).into_owned();
            for s in [split.near, split.far] {
                let end = if s.from_bus == 39 { s.to_bus } else { s.from_bus };
                stripped[(end, end)] -= s.series_impedance.inv()
                    + Complex64::new(0.0, s.charging_susceptance / 2.0);
            }
            let mut restored = stripped.clone();
            stamp_branch(&mut restored, l.from_bus, l.to_bus, l.series_impedance, l.charging_susceptance);
            for i in 0..39 {
                for j in 0..39 {
                    assert!(close(stripped[(i, j)], post.matrix[(i, j)], 1e-12 * (1.0 + post.matrix[(i, j)].norm())));
                    assert!(close(restored[(i, j)], pre.matrix[(i, j)], 1e-12 * (1.0 + pre.matrix[(i, j)].norm())));
                }
            }
            assert!(faulted.matrix[(39, 39)].im < -1e5);
        }
    }

    #[test]
    fn islanding_flagged_on_ne39() {
        let net = Network::new_england_39();
        // Line 16-19 (0-based 15-18) is the only path to buses 19, 20, 33, 34.
        let li = net.lines.iter().position(|l| l.from_bus == 15 && l.to_bus == 18).unwrap();
        let post = build_admittance(&net, Topology::Postfault(FaultSpec::bolted(li, 0.5))).unwrap();
        assert!(post.islanded);
        let other = build_admittance(&net, Topology::Postfault(FaultSpec::bolted(0, 0.5))).unwrap();
        assert!(!other.islanded);
    }

    #[test]
    fn transformer_fault_rejected() {
        let net = Network::new_england_39();
        let li = net.lines.iter().position(|l| l.has_transformer).unwrap();
        assert!(build_admittance(&net, Topology::Faulted(FaultSpec::bolted(li, 0.5))).is_err());
    }

    #[test]
    fn adjacency_small_cases() {
        let net = parse_network(TWO_BUS).unwrap();
        let a = adjacency_from_network(&net);
        assert!(a.get(0, 1) && a.get(1, 0) && !a.get(0, 0) && !a.get(1, 1));
        let path = Adjacency::from_edges(3, [(0, 1), (1, 2)]);
        assert_eq!((0..3).map(|i| path.degree(i)).collect::<Vec<_>>(), vec![1, 2, 1]);
    }

    #[test]
    fn ne39_adjacency_degrees_match_line_list() {
        let net = Network::new_england_39();
        let a = adjacency_from_network(&net);
        let mut degree = vec![0; 39];
        let mut seen = std::collections::HashSet::new();
        for l in &net.lines {
            let key = (l.from_bus.min(l.to_bus), l.from_bus.max(l.to_bus));
            if seen.insert(key) {
                degree[l.from_bus] += 1;
                degree[l.to_bus] += 1;
            }
        }
        for i in 0..39 {
            assert_eq!(a.degree(i), degree[i]);
            assert!(!a.get(i, i));
            for j in 0..39 {
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
        assert!(net.buses.iter().all(|b| b.kind != BusKind::Slack || b.id == 30));
    }

    proptest! {
        #[test]
        fn adjacency_ignores_line_order(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut net = Network::new_england_39();
            let before = adjacency_from_network(&net);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            net.lines.shuffle(&mut rng);
            prop_assert_eq!(before, adjacency_from_network(&net));
        }
    }
}
