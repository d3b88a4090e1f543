//! Two-dimensional simplicial meshes, phantoms and the plain-text mesh format.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{reverse_cuthill_mckee, SkylineMatrix};

pub type Point = [f64; 2];

/// A boundary edge with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub normal: Point,
    pub length: f64,
}

/// Immutable piecewise-linear triangulation with explicit boundary structure.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    element_areas: Vec<f64>,
    /// Gradients of the three barycentric hat functions, constant per element.
    basis_gradients: Vec<[Point; 3]>,
    boundary_nodes: Vec<usize>,
    boundary_slot: Vec<Option<usize>>,
    boundary_weights: Vec<f64>,
    dof_nodes: Vec<usize>,
    node_dof: Vec<Option<usize>>,
    stiffness_pattern: OnceLock<SkylineMatrix>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Builds a mesh and checks its invariants.
    ///
    /// Boundary edges may be listed in any orientation; normals are oriented
    /// away from the single element owning each edge.
    pub fn new(nodes: Vec<Point>, elements: Vec<[usize; 3]>, boundary: Vec<[usize; 2]>) -> Result<Self> {
        let n = nodes.len();
        if elements.is_empty() {
            return Err(Error::Structural("mesh has no elements".into()));
        }
        let mut element_areas = Vec::with_capacity(elements.len());
        let mut basis_gradients = Vec::with_capacity(elements.len());
        for (e, tri) in elements.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::Structural(format!("element {e} references a missing node")));
            }
            let [a, b, c] = tri.map(|v| nodes[v]);
            let area = signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(Error::Structural(format!("element {e} has non-positive signed area {area:e}")));
            }
            let inv = 1.0 / (2.0 * area);
            // grad of lambda_k = perp(opposite edge) / (2 area)
            let g = [
                [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
                [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
                [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
            ];
            element_areas.push(area);
            basis_gradients.push(g);
        }

        // Edge -> owning elements, to identify the topological boundary.
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (e, tri) in elements.iter().enumerate() {
            for k in 0..3 {
                let (p, q) = (tri[k], tri[(k + 1) % 3]);
                owners.entry((p.min(q), p.max(q))).or_default().push(e);
            }
        }
        if let Some((edge, _)) = owners.iter().find(|(_, v)| v.len() > 2) {
            return Err(Error::Structural(format!("edge {edge:?} shared by more than two elements")));
        }
        let topological: usize = owners.values().filter(|v| v.len() == 1).count();
        if topological != boundary.len() {
            return Err(Error::Structural(format!(
                "boundary lists {} edges but the triangulation has {} boundary edges",
                boundary.len(),
                topological
            )));
        }
        let mut boundary_edges = Vec::with_capacity(boundary.len());
        let mut incidence = vec![0usize; n];
        for &[p, q] in &boundary {
            let key = (p.min(q), p.max(q));
            let owner = match owners.get(&key) {
                Some(v) if v.len() == 1 => v[0],
                _ => {
                    return Err(Error::Structural(format!("edge ({p}, {q}) is not a boundary edge")));
                }
            };
            let tri = elements[owner];
            let third = *tri.iter().find(|&&v| v != p && v != q).unwrap();
            let (a, b) = (nodes[p], nodes[q]);
            let t = [b[0] - a[0], b[1] - a[1]];
            let length = t[0].hypot(t[1]);
            let mut normal = [t[1] / length, -t[0] / length];
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let inward = [nodes[third][0] - mid[0], nodes[third][1] - mid[1]];
            if normal[0] * inward[0] + normal[1] * inward[1] > 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            incidence[p] += 1;
            incidence[q] += 1;
            boundary_edges.push(BoundaryEdge { nodes: [p, q], normal, length });
        }
        if incidence.iter().any(|&c| c % 2 == 1) {
            return Err(Error::Structural("boundary edges do not form closed loops".into()));
        }

        let boundary_nodes: Vec<usize> = (0..n).filter(|&v| incidence[v] > 0).collect();
        let mut boundary_slot = vec![None; n];
        for (s, &v) in boundary_nodes.iter().enumerate() {
            boundary_slot[v] = Some(s);
        }
        let mut boundary_weights = vec![0.0; boundary_nodes.len()];
        for edge in &boundary_edges {
            for v in edge.nodes {
                boundary_weights[boundary_slot[v].unwrap()] += 0.5 * edge.length;
            }
        }

        // Interior unknowns in reverse Cuthill-McKee order.
        let used = {
            let mut used = vec![false; n];
            elements.iter().flatten().for_each(|&v| used[v] = true);
            used
        };
        let interior: Vec<usize> = (0..n).filter(|&v| used[v] && boundary_slot[v].is_none()).collect();
        let mut local = vec![usize::MAX; n];
        for (i, &v) in interior.iter().enumerate() {
            local[v] = i;
        }
        let mut adjacency = vec![Vec::new(); interior.len()];
        for tri in &elements {
            for &p in tri {
                for &q in tri {
                    if p != q && local[p] != usize::MAX && local[q] != usize::MAX {
                        adjacency[local[p]].push(local[q]);
                    }
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let order = reverse_cuthill_mckee(&adjacency);
        let dof_nodes: Vec<usize> = order.iter().map(|&i| interior[i]).collect();
        let mut node_dof = vec![None; n];
        for (d, &v) in dof_nodes.iter().enumerate() {
            node_dof[v] = Some(d);
        }

        Ok(Self {
            nodes,
            elements,
            boundary_edges,
            element_areas,
            basis_gradients,
            boundary_nodes,
            boundary_slot,
            boundary_weights,
            dof_nodes,
            node_dof,
            stiffness_pattern: OnceLock::new(),
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn element_areas(&self) -> &[f64] {
        &self.element_areas
    }

    pub fn boundary_lengths(&self) -> Vec<f64> {
        self.boundary_edges.iter().map(|e| e.length).collect()
    }

    pub fn basis_gradients(&self, element: usize) -> &[Point; 3] {
        &self.basis_gradients[element]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Boundary nodes in ascending node order; this is the trace ordering.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    /// Position of `node` within [`Mesh::boundary_nodes`], if it lies on the boundary.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    /// Lumped boundary mass: half the length of each incident boundary edge.
    ///
    /// Exact for the boundary integral of a piecewise-linear trace.
    pub fn boundary_weights(&self) -> &[f64] {
        &self.boundary_weights
    }

    /// Interior nodes in unknown (degree-of-freedom) order.
    pub fn dof_nodes(&self) -> &[usize] {
        &self.dof_nodes
    }

    pub fn node_dof(&self, node: usize) -> Option<usize> {
        self.node_dof[node]
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_nodes.len()
    }

    /// Zero matrix with the envelope of the interior stiffness matrix.
    pub(crate) fn stiffness_pattern(&self) -> &SkylineMatrix {
        self.stiffness_pattern.get_or_init(|| {
            let pattern = self.elements.iter().flat_map(|tri| {
                let dofs = tri.map(|v| self.node_dof[v]);
                (0..3).flat_map(move |a| (0..3).filter_map(move |b| Some((dofs[a]?, dofs[b]?))))
            });
            SkylineMatrix::with_pattern(self.dof_nodes.len(), pattern)
        })
    }

    pub fn total_area(&self) -> f64 {
        self.element_areas.iter().sum()
    }

    pub fn boundary_length(&self) -> f64 {
        self.boundary_edges.iter().map(|e| e.length).sum()
    }

    pub fn centroid(&self, element: usize) -> Point {
        let [a, b, c] = self.elements[element].map(|v| self.nodes[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradient of the piecewise-linear interpolant of nodal values `u` on `element`.
    #[inline]
    pub fn element_gradient(&self, element: usize, u: &[f64]) -> Point {
        let g = &self.basis_gradients[element];
        let tri = &self.elements[element];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += u[tri[k]] * g[k][0];
            out[1] += u[tri[k]] * g[k][1];
        }
        out
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Integral over the boundary of the piecewise-linear function with the given boundary-node values.
    pub fn boundary_integral(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.boundary_weights).map(|(v, w)| v * w).sum()
    }

    /// Structured triangulation of the unit square with `n` cells per side.
    pub fn unit_square(n: usize) -> Self {
        assert!(n >= 1, "unit square mesh needs n >= 1");
        let stride = n + 1;
        let h = 1.0 / n as f64;
        let mut nodes = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            for i in 0..=n {
                let x = if i == n { 1.0 } else { i as f64 * h };
                let y = if j == n { 1.0 } else { j as f64 * h };
                nodes.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * stride + i;
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                elements.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut boundary = Vec::with_capacity(4 * n);
        boundary.extend((0..n).map(|i| [id(i, 0), id(i + 1, 0)]));
        boundary.extend((0..n).map(|j| [id(n, j), id(n, j + 1)]));
        boundary.extend((0..n).map(|i| [id(n - i, n), id(n - i - 1, n)]));
        boundary.extend((0..n).map(|j| [id(0, n - j), id(0, n - j - 1)]));
        Self::new(nodes, elements, boundary).expect("unit square mesh is valid by construction")
    }

    /// Disk of the given radius centred at the origin, built from `refinement`
    /// concentric rings with `6 l` nodes on ring `l`.
    pub fn disk(radius: f64, refinement: usize) -> Self {
        assert!(radius > 0.0 && refinement >= 1);
        let rings = refinement;
        let mut nodes = vec![[0.0, 0.0]];
        let mut ring_start = vec![0usize];
        let mut ring_len = vec![1usize];
        for l in 1..=rings {
            ring_start.push(nodes.len());
            let m = 6 * l;
            ring_len.push(m);
            let r = radius * l as f64 / rings as f64;
            for k in 0..m {
                let t = 2.0 * PI * k as f64 / m as f64;
                nodes.push([r * t.cos(), r * t.sin()]);
            }
        }
        let mut elements = Vec::new();
        // Innermost fan.
        for k in 0..6 {
            elements.push([0, ring_start[1] + k, ring_start[1] + (k + 1) % 6]);
        }
        for l in 2..=rings {
            let (si, ni) = (ring_start[l - 1], ring_len[l - 1]);
            let (so, no) = (ring_start[l], ring_len[l]);
            let (mut i, mut j) = (0usize, 0usize);
            while i < ni || j < no {
                let inner = si + i % ni;
                let outer = so + j % no;
                // Advance whichever ring's next node has the smaller angle; outer wins ties.
                let next_in = (i + 1) as f64 / ni as f64;
                let next_out = (j + 1) as f64 / no as f64;
                if j < no && (i >= ni || next_out <= next_in) {
                    elements.push([inner, outer, so + (j + 1) % no]);
                    j += 1;
                } else {
                    elements.push([inner, outer, si + (i + 1) % ni]);
                    i += 1;
                }
            }
        }
        for tri in &mut elements {
            let [a, b, c] = tri.map(|v| nodes[v]);
            if signed_area(a, b, c) < 0.0 {
                tri.swap(1, 2);
            }
        }
        let (so, no) = (ring_start[rings], ring_len[rings]);
        let boundary = (0..no).map(|k| [so + k, so + (k + 1) % no]).collect();
        Self::new(nodes, elements, boundary).expect("disk mesh is valid by construction")
    }

    /// Serializes to the plain-text `nodes` / `elements` / `boundary` format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "nodes {}", self.nodes.len()).unwrap();
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(s, "{i} {:.16e} {:.16e}", p[0], p[1]).unwrap();
        }
        writeln!(s, "elements {}", self.elements.len()).unwrap();
        for (i, t) in self.elements.iter().enumerate() {
            writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        writeln!(s, "boundary {}", self.boundary_edges.len()).unwrap();
        for (i, e) in self.boundary_edges.iter().enumerate() {
            writeln!(s, "{i} {} {}", e.nodes[0], e.nodes[1]).unwrap();
        }
        s
    }

    /// Parses the plain-text mesh format. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        #[derive(Clone, Copy, PartialEq)]
        enum Section {
            None,
            Nodes,
            Elements,
            Boundary,
        }
        let mut section = Section::None;
        let mut nodes: Vec<Point> = Vec::new();
        let mut elements = Vec::new();
        let mut boundary = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: lineno + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "nodes" => {
                    section = Section::Nodes;
                    continue;
                }
                "elements" => {
                    section = Section::Elements;
                    continue;
                }
                "boundary" => {
                    section = Section::Boundary;
                    continue;
                }
                _ => {}
            }
            let index: usize = fields[0].parse().map_err(|_| err(format!("bad index {:?}", fields[0])))?;
            let expected = match section {
                Section::None => return Err(err("data before any section header".into())),
                Section::Nodes => nodes.len(),
                Section::Elements => elements.len(),
                Section::Boundary => boundary.len(),
            };
            if index != expected {
                return Err(err(format!("expected index {expected}, found {index}")));
            }
            let want = if section == Section::Elements { 4 } else { 3 };
            if fields.len() != want {
                return Err(err(format!("expected {want} fields, found {}", fields.len())));
            }
            match section {
                Section::Nodes => {
                    let x: f64 = fields[1].parse().map_err(|_| err("bad coordinate".into()))?;
                    let y: f64 = fields[2].parse().map_err(|_| err("bad coordinate".into()))?;
                    nodes.push([x, y]);
                }
                Section::Elements | Section::Boundary => {
                    let ids = fields[1..]
                        .iter()
                        .map(|f| f.parse::<usize>().map_err(|_| err(format!("bad node index {f:?}"))))
                        .collect::<Result<Vec<_>>>()?;
                    if section == Section::Elements {
                        elements.push([ids[0], ids[1], ids[2]]);
                    } else {
                        boundary.push([ids[0], ids[1]]);
                    }
                }
                Section::None => unreachable!(),
            }
        }
        Self::new(nodes, elements, boundary)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Region shapes used by phantoms and test inclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Disk { center: Point, radius: f64 },
    Rectangle { min: Point, max: Point },
    Polygon { vertices: Vec<Point> },
}

impl Shape {
    /// Closed-set membership.
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Shape::Disk { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy <= radius * radius
            }
            Shape::Rectangle { min, max } => (min[0]..=max[0]).contains(&p[0]) && (min[1]..=max[1]).contains(&p[1]),
            Shape::Polygon { vertices } => point_in_polygon(vertices, p),
        }
    }

    fn bounding_box(&self) -> (Point, Point) {
        match self {
            Shape::Disk { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            Shape::Rectangle { min, max } => (*min, *max),
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for d in 0..2 {
                        lo[d] = lo[d].min(v[d]);
                        hi[d] = hi[d].max(v[d]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Elements whose centroid lies in the shape.
    pub fn element_set(&self, mesh: &Mesh) -> Vec<usize> {
        (0..mesh.num_elements()).filter(|&e| self.contains(mesh.centroid(e))).collect()
    }
}

fn point_in_polygon(vertices: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    #[serde(flatten)]
    pub shape: Shape,
    pub model: String,
}

/// Background material plus an ordered list of inclusions; later inclusions override earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub background: String,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

impl Phantom {
    pub fn homogeneous(background: impl Into<String>) -> Self {
        Self { background: background.into(), inclusions: Vec::new() }
    }
}

/// Labels each element with the index (into `model_ids`) of the model owning its centroid.
pub fn rasterize_phantom(mesh: &Mesh, phantom: &Phantom, model_ids: &[&str]) -> Result<Vec<usize>> {
    let lookup = |id: &str| {
        model_ids
            .iter()
            .position(|m| *m == id)
            .ok_or_else(|| Error::Config(format!("unknown model id {id:?}")))
    };
    let background = lookup(&phantom.background)?;
    let (lo, hi) = mesh.bounding_box();
    let slack = 1e-12 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let mut labeled = Vec::with_capacity(phantom.inclusions.len());
    for inc in &phantom.inclusions {
        let (a, b) = inc.shape.bounding_box();
        let inside = (0..2).all(|d| a[d] >= lo[d] - slack && b[d] <= hi[d] + slack);
        if !inside {
            return Err(Error::Config(format!("inclusion {:?} extends outside the domain bounding box", inc.shape)));
        }
        labeled.push((&inc.shape, lookup(&inc.model)?));
    }
    Ok((0..mesh.num_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            labeled
                .iter()
                .rev()
                .find(|(shape, _)| shape.contains(c))
                .map_or(background, |&(_, id)| id)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn check_outward_normals(mesh: &Mesh) {
        for edge in mesh.boundary_edges() {
            assert_relative_eq!(edge.normal[0].hypot(edge.normal[1]), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn unit_square_counts() {
        for (n, nodes, elements, edges) in [(1, 4, 2, 4), (2, 9, 8, 8), (5, 36, 50, 20)] {
            let m = Mesh::unit_square(n);
            assert_eq!(m.num_nodes(), nodes);
            assert_eq!(m.num_elements(), elements);
            assert_eq!(m.boundary_edges().len(), edges);
            check_outward_normals(&m);
        }
        assert_relative_eq!(Mesh::unit_square(1).total_area(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(Mesh::unit_square(32).total_area(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn unit_square_normals_point_out_of_the_square() {
        let m = Mesh::unit_square(4);
        for e in m.boundary_edges() {
            let [a, b] = e.nodes.map(|v| m.nodes()[v]);
            let mid = [0.5 * (a[0] + b[0]) - 0.5, 0.5 * (a[1] + b[1]) - 0.5];
            assert!(mid[0] * e.normal[0] + mid[1] * e.normal[1] > 0.0);
        }
    }

    #[test]
    fn boundary_mass_reproduces_length() {
        for m in [Mesh::unit_square(7), Mesh::disk(0.5, 6)] {
            let ones = vec![1.0; m.boundary_nodes().len()];
            assert_relative_eq!(m.boundary_integral(&ones), m.boundary_length(), max_relative = 1e-12);
        }
    }

    #[test]
    fn disk_area_and_perimeter() {
        let m = Mesh::disk(1.0, 4);
        let area = m.total_area();
        assert!(area < PI && (PI - area) / PI < 0.02);
        check_outward_normals(&m);
        for &v in m.boundary_nodes() {
            let p = m.nodes()[v];
            assert!((p[0].hypot(p[1]) - 1.0).abs() <= 1e-12);
        }
        let half = Mesh::disk(0.5, 4);
        assert!((half.boundary_length() - PI).abs() / PI < 0.02);
    }

    #[test]
    fn disk_area_deficit_shrinks_fourfold() {
        let d1 = PI - Mesh::disk(1.0, 8).total_area();
        let d2 = PI - Mesh::disk(1.0, 16).total_area();
        let ratio = d1 / d2;
        assert!((3.8..4.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Mesh::disk(1.0, 5).to_text();
        let b = Mesh::disk(1.0, 5).to_text();
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = Mesh::disk(0.7, 3);
        let back = Mesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.nodes(), m.nodes());
        assert_eq!(back.elements(), m.elements());
        assert_eq!(back.to_text(), m.to_text());
    }

    #[test]
    fn rejects_clockwise_element_and_open_boundary() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(Mesh::new(nodes.clone(), vec![[0, 2, 1]], vec![[0, 1], [1, 2], [2, 0]]).is_err());
        assert!(Mesh::new(nodes.clone(), vec![[0, 1, 2]], vec![[0, 1], [1, 2]]).is_err());
        assert!(Mesh::new(nodes, vec![[0, 1, 2]], vec![[0, 1], [2, 1], [2, 0]]).is_ok());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Mesh::from_text("nodes 1\n0 0.0 zz\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn rasterize_empty_and_full() {
        let m = Mesh::unit_square(8);
        let ids = ["bg", "inc"];
        let labels = rasterize_phantom(&m, &Phantom::homogeneous("bg"), &ids).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        let full = Phantom {
            background: "bg".into(),
            inclusions: vec![Inclusion {
                shape: Shape::Disk { center: [0.5, 0.5], radius: 0.5 },
                model: "inc".into(),
            }],
        };
        // The inscribed disk misses the corners, so use a rectangle for full coverage.
        let labels = rasterize_phantom(&m, &full, &ids).unwrap();
        assert!(labels.contains(&0) && labels.contains(&1));
        let cover = Phantom {
            background: "bg".into(),
            inclusions: vec![Inclusion {
                shape: Shape::Rectangle { min: [0.0, 0.0], max: [1.0, 1.0] },
                model: "inc".into(),
            }],
        };
        assert!(rasterize_phantom(&m, &cover, &ids).unwrap().iter().all(|&l| l == 1));
    }

    #[test]
    fn rasterized_disk_area_matches() {
        let m = Mesh::unit_square(64);
        let phantom = Phantom {
            background: "bg".into(),
            inclusions: vec![Inclusion {
                shape: Shape::Disk { center: [0.3, 0.3], radius: 0.15 },
                model: "inc".into(),
            }],
        };
        let labels = rasterize_phantom(&m, &phantom, &["bg", "inc"]).unwrap();
        let area: f64 = labels
            .iter()
            .zip(m.element_areas())
            .filter(|(&l, _)| l == 1)
            .map(|(_, a)| a)
            .sum();
        let exact = PI * 0.15 * 0.15;
        assert!((area - exact).abs() / exact < 0.05, "area {area} vs {exact}");
    }

    #[test]
    fn rasterize_rejects_unknown_model_and_out_of_box() {
        let m = Mesh::unit_square(4);
        assert!(matches!(
            rasterize_phantom(&m, &Phantom::homogeneous("nope"), &["bg"]),
            Err(Error::Config(_))
        ));
        let outside = Phantom {
            background: "bg".into(),
            inclusions: vec![Inclusion { shape: Shape::Disk { center: [1.0, 1.0], radius: 0.5 }, model: "bg".into() }],
        };
        assert!(rasterize_phantom(&m, &outside, &["bg"]).is_err());
    }

    #[test]
    fn later_inclusions_override() {
        let m = Mesh::unit_square(4);
        let phantom = Phantom {
            background: "a".into(),
            inclusions: vec![
                Inclusion { shape: Shape::Rectangle { min: [0.0, 0.0], max: [1.0, 1.0] }, model: "b".into() },
                Inclusion { shape: Shape::Rectangle { min: [0.0, 0.0], max: [0.5, 1.0] }, model: "c".into() },
            ],
        };
        let labels = rasterize_phantom(&m, &phantom, &["a", "b", "c"]).unwrap();
        for (e, &l) in labels.iter().enumerate() {
            let c = m.centroid(e);
            assert_eq!(l, if c[0] <= 0.5 { 2 } else { 1 });
        }
    }

    #[test]
    fn polygon_membership() {
        let tri = Shape::Polygon { vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] };
        assert!(tri.contains([0.2, 0.2]));
        assert!(!tri.contains([0.8, 0.8]));
    }
}
