//! Spatial input construction: electrode montage and projection, the
//! distance-based and random electrode orderings, topography rendering and
//! band stacking.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ConnectivityKind, ConnectivityMatrix};
use crate::signalcore::BandDefinition;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("montage line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid montage: {0}")]
    InvalidMontage(String),
    #[error("montage has no left-hemisphere electrodes")]
    NoLeftHemisphere,
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("not a permutation: {0}")]
    NotAPermutation(String),
    #[error("electrodes {0} and {1} project to the same position")]
    DuplicatePosition(String, String),
    #[error("non-finite value for electrode {0}")]
    NonFinite(usize),
    #[error("bad band stack: {0}")]
    BadStack(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    Left,
    Right,
    Midline,
}

impl FromStr for Hemisphere {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Hemisphere::Left),
            "right" | "r" => Ok(Hemisphere::Right),
            "midline" | "mid" | "z" => Ok(Hemisphere::Midline),
            other => Err(format!("unknown hemisphere tag {other:?}")),
        }
    }
}

impl fmt::Display for Hemisphere {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hemisphere::Left => "left",
            Hemisphere::Right => "right",
            Hemisphere::Midline => "midline",
        })
    }
}

/// One electrode. `pos3d` is on the unit sphere with x to the right, y to the
/// front and z up; `pos2d` is its azimuthal equidistant projection from the
/// vertex, scaled so the head disk is the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub label: String,
    pub pos3d: [f64; 3],
    pub pos2d: [f64; 2],
    pub hemisphere: Hemisphere,
}

const MIDLINE_TOL: f64 = 1e-6;
const HEAD_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeMontage {
    electrodes: Vec<Electrode>,
}

const DEAP32: &str = include_str!("../data/deap32.montage");

impl ElectrodeMontage {
    /// Builds a montage from `(label, xyz, hemisphere)` rows. Positions are
    /// normalised onto the unit sphere.
    pub fn new(rows: Vec<(String, [f64; 3], Hemisphere)>) -> Result<Self, LayoutError> {
        if rows.is_empty() {
            return Err(LayoutError::InvalidMontage("no electrodes".into()));
        }
        let mut labels: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(LayoutError::InvalidMontage(format!("duplicate label {}", w[0])));
        }
        let mut unit = Vec::with_capacity(rows.len());
        for (label, p, hemi) in &rows {
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(LayoutError::InvalidMontage(format!("{label}: degenerate position")));
            }
            let q = [p[0] / norm, p[1] / norm, p[2] / norm];
            let side = if q[0].abs() <= MIDLINE_TOL {
                Hemisphere::Midline
            } else if q[0] < 0.0 {
                Hemisphere::Left
            } else {
                Hemisphere::Right
            };
            if side != *hemi {
                return Err(LayoutError::InvalidMontage(format!(
                    "{label}: tagged {hemi} but lateral coordinate {:.6} says {side}",
                    q[0]
                )));
            }
            let q = if side == Hemisphere::Midline { [0.0, q[1], q[2]] } else { q };
            unit.push(q);
        }
        let polar: Vec<f64> = unit.iter().map(|q| q[2].clamp(-1.0, 1.0).acos()).collect();
        let max_polar = polar.iter().cloned().fold(0.0, f64::max);
        let scale = if max_polar > 0.0 { max_polar * HEAD_MARGIN } else { 1.0 };
        let electrodes = rows
            .into_iter()
            .zip(unit)
            .zip(polar)
            .map(|(((label, _, hemisphere), q), theta)| {
                let r = theta / scale;
                let az = q[1].atan2(q[0]);
                let pos2d = if theta == 0.0 { [0.0, 0.0] } else { [r * az.cos(), r * az.sin()] };
                Electrode { label, pos3d: q, pos2d, hemisphere }
            })
            .collect();
        Ok(Self { electrodes })
    }

    /// Parses the whitespace table `label x y z hemisphere`; `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self, LayoutError> {
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| LayoutError::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let mut xyz = [0.0; 3];
            for (k, f) in fields[1..4].iter().enumerate() {
                xyz[k] = f.parse().map_err(|_| err(format!("bad coordinate {f:?}")))?;
            }
            let hemi = fields[4].parse().map_err(err)?;
            rows.push((fields[0].to_string(), xyz, hemi));
        }
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LayoutError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The 32-electrode 10-20 subset shipped with the crate.
    pub fn deap32() -> Self {
        Self::parse(DEAP32).expect("bundled montage parses")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# label x y z hemisphere\n");
        for e in &self.electrodes {
            out.push_str(&format!(
                "{} {:.6} {:.6} {:.6} {}\n",
                e.label, e.pos3d[0], e.pos3d[1], e.pos3d[2], e.hemisphere
            ));
        }
        out
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.electrodes.iter().position(|e| e.label == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingMethod {
    Identity,
    Distance,
    Random { seed: u64 },
}

/// `perm[i]` is the electrode placed at matrix position `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectrodeOrdering {
    perm: Vec<usize>,
    method: OrderingMethod,
}

impl ElectrodeOrdering {
    pub fn new(perm: Vec<usize>, method: OrderingMethod) -> Result<Self, LayoutError> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(LayoutError::NotAPermutation(format!("{perm:?}")));
            }
            seen[p] = true;
        }
        Ok(Self { perm, method })
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), method: OrderingMethod::Identity }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn method(&self) -> OrderingMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv, method: self.method }
    }

    /// The ordering equivalent to applying `self` first, then `then`.
    pub fn then(&self, then: &ElectrodeOrdering) -> Self {
        let perm = then.perm.iter().map(|&p| self.perm[p]).collect();
        Self { perm, method: then.method }
    }
}

fn nearly(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn greedy_chain(montage: &ElectrodeMontage, mut pool: Vec<usize>, start: usize) -> Vec<usize> {
    let es = montage.electrodes();
    let mut chain = vec![start];
    pool.retain(|&i| i != start);
    let mut cur = start;
    while !pool.is_empty() {
        let (pos, &next) = pool
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                let da = dist3(&es[cur].pos3d, &es[a].pos3d);
                let db = dist3(&es[cur].pos3d, &es[b].pos3d);
                if nearly(da, db) {
                    es[a].label.cmp(&es[b].label)
                } else {
                    da.total_cmp(&db)
                }
            })
            .expect("pool is non-empty");
        pool.swap_remove(pos);
        chain.push(next);
        cur = next;
    }
    chain
}

/// Hemisphere-aware nearest-neighbour ordering: starting at the most anterior
/// left electrode, walk the left hemisphere greedily by 3-D distance; then from
/// the most posterior right electrode walk the right hemisphere; finally the
/// midline front to back. Ties go to the lexicographically smaller label.
pub fn distance_ordering(montage: &ElectrodeMontage) -> Result<ElectrodeOrdering, LayoutError> {
    let es = montage.electrodes();
    let side = |h: Hemisphere| -> Vec<usize> {
        (0..es.len()).filter(|&i| es[i].hemisphere == h).collect()
    };
    let left = side(Hemisphere::Left);
    let right = side(Hemisphere::Right);
    let mut mid = side(Hemisphere::Midline);
    if left.is_empty() {
        return Err(LayoutError::NoLeftHemisphere);
    }
    // among equally anterior (posterior) candidates prefer the most lateral
    let pick = |set: &[usize], front: bool| -> Option<usize> {
        set.iter().copied().min_by(|&a, &b| {
            let (ya, yb) = (es[a].pos3d[1], es[b].pos3d[1]);
            if !nearly(ya, yb) {
                return if front { yb.total_cmp(&ya) } else { ya.total_cmp(&yb) };
            }
            let (xa, xb) = (es[a].pos3d[0].abs(), es[b].pos3d[0].abs());
            if !nearly(xa, xb) {
                return xb.total_cmp(&xa);
            }
            es[a].label.cmp(&es[b].label)
        })
    };
    let mut perm = greedy_chain(montage, left.clone(), pick(&left, true).unwrap());
    if let Some(start) = pick(&right, false) {
        perm.extend(greedy_chain(montage, right, start));
    }
    mid.sort_by(|&a, &b| {
        let (ya, yb) = (es[a].pos3d[1], es[b].pos3d[1]);
        if nearly(ya, yb) {
            es[a].label.cmp(&es[b].label)
        } else {
            yb.total_cmp(&ya)
        }
    });
    perm.extend(mid);
    ElectrodeOrdering::new(perm, OrderingMethod::Distance)
}

/// Uniformly random permutation, reproducible per seed.
pub fn random_ordering(n: usize, seed: u64) -> ElectrodeOrdering {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ElectrodeOrdering { perm, method: OrderingMethod::Random { seed } }
}

/// Permutes rows and columns together: `out[i][j] = m[perm[i]][perm[j]]`.
pub fn permute_square<T: Copy>(values: &[T], n: usize, ord: &ElectrodeOrdering) -> Vec<T> {
    let p = ord.perm();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let row = p[i] * n;
        out.extend(p.iter().map(|&pj| values[row + pj]));
    }
    out
}

pub fn apply_ordering(
    m: &ConnectivityMatrix,
    ord: &ElectrodeOrdering,
) -> Result<ConnectivityMatrix, LayoutError> {
    if ord.len() != m.n {
        return Err(LayoutError::SizeMismatch { expected: m.n, got: ord.len() });
    }
    Ok(ConnectivityMatrix {
        n: m.n,
        values: permute_square(&m.values, m.n, ord),
        kind: m.kind,
        band: m.band.clone(),
    })
}

#[derive(Debug, Clone)]
enum Pixel {
    Outside,
    Node(usize),
    Weighted(Vec<f64>),
}

/// Inverse-distance-weighted (power 2) rasteriser for one montage and
/// resolution. Weights are independent of the values, so rendering is linear.
#[derive(Debug, Clone)]
pub struct TopographyRenderer {
    res: usize,
    n: usize,
    pixels: Vec<Pixel>,
}

/// Centre of pixel `(row, col)` in head coordinates; row 0 is the front.
pub fn pixel_center(res: usize, row: usize, col: usize) -> [f64; 2] {
    [
        -1.0 + (2 * col + 1) as f64 / res as f64,
        1.0 - (2 * row + 1) as f64 / res as f64,
    ]
}

fn idw_weights(montage: &ElectrodeMontage, p: [f64; 2]) -> Result<Vec<f64>, usize> {
    let mut w = Vec::with_capacity(montage.len());
    for (i, e) in montage.electrodes().iter().enumerate() {
        let d2 = (p[0] - e.pos2d[0]).powi(2) + (p[1] - e.pos2d[1]).powi(2);
        if d2 < 1e-24 {
            return Err(i);
        }
        w.push(1.0 / d2);
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

impl TopographyRenderer {
    pub fn new(montage: &ElectrodeMontage, res: usize) -> Result<Self, LayoutError> {
        if res == 0 {
            return Err(LayoutError::InvalidMontage("zero resolution".into()));
        }
        let es = montage.electrodes();
        for i in 0..es.len() {
            for j in 0..i {
                let d = (es[i].pos2d[0] - es[j].pos2d[0]).hypot(es[i].pos2d[1] - es[j].pos2d[1]);
                if d < 1e-12 {
                    return Err(LayoutError::DuplicatePosition(
                        es[j].label.clone(),
                        es[i].label.clone(),
                    ));
                }
            }
        }
        let mut pixels = Vec::with_capacity(res * res);
        for r in 0..res {
            for c in 0..res {
                let p = pixel_center(res, r, c);
                if p[0] * p[0] + p[1] * p[1] > 1.0 {
                    pixels.push(Pixel::Outside);
                    continue;
                }
                pixels.push(match idw_weights(montage, p) {
                    Ok(w) => Pixel::Weighted(w),
                    Err(i) => Pixel::Node(i),
                });
            }
        }
        // the pixel holding an electrode takes its value exactly, unless two
        // electrodes share it
        let mut owner: Vec<Option<Option<usize>>> = vec![None; res * res];
        for (i, e) in es.iter().enumerate() {
            let c = (((e.pos2d[0] + 1.0) / 2.0 * res as f64).floor() as usize).min(res - 1);
            let r = (((1.0 - e.pos2d[1]) / 2.0 * res as f64).floor() as usize).min(res - 1);
            let k = r * res + c;
            owner[k] = match owner[k] {
                None => Some(Some(i)),
                Some(_) => Some(None),
            };
        }
        for (k, o) in owner.into_iter().enumerate() {
            if let (Some(Some(i)), false) = (o, matches!(pixels[k], Pixel::Outside)) {
                pixels[k] = Pixel::Node(i);
            }
        }
        Ok(Self { res, n: es.len(), pixels })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    /// Row-major `res x res` image.
    pub fn render(&self, values: &[f64]) -> Result<Vec<f64>, LayoutError> {
        if values.len() != self.n {
            return Err(LayoutError::SizeMismatch { expected: self.n, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LayoutError::NonFinite(i));
        }
        Ok(self
            .pixels
            .iter()
            .map(|p| match p {
                Pixel::Outside => 0.0,
                Pixel::Node(i) => values[*i],
                Pixel::Weighted(w) => w.iter().zip(values).map(|(a, b)| a * b).sum(),
            })
            .collect())
    }

    pub fn is_inside(&self, row: usize, col: usize) -> bool {
        !matches!(self.pixels[row * self.res + col], Pixel::Outside)
    }

    /// Electrode whose value the pixel copies exactly, if any.
    pub fn node_at(&self, row: usize, col: usize) -> Option<usize> {
        match self.pixels[row * self.res + col] {
            Pixel::Node(i) => Some(i),
            _ => None,
        }
    }
}

/// Continuous IDW interpolant, exact at electrode positions.
pub fn interpolate_at(montage: &ElectrodeMontage, values: &[f64], p: [f64; 2]) -> f64 {
    match idw_weights(montage, p) {
        Ok(w) => w.iter().zip(values).map(|(a, b)| a * b).sum(),
        Err(i) => values[i],
    }
}

pub fn render_topography(
    values: &[f64],
    montage: &ElectrodeMontage,
    res: usize,
) -> Result<Vec<f64>, LayoutError> {
    TopographyRenderer::new(montage, res)?.render(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorKind {
    Topography,
    Connectivity(ConnectivityKind),
}

/// CNN input: `bands` planes of `side x side`, stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub bands: usize,
    pub side: usize,
    pub values: Vec<f32>,
    pub kind: TensorKind,
    pub ordering: Option<ElectrodeOrdering>,
}

impl FeatureTensor {
    pub fn plane(&self, band: usize) -> &[f32] {
        let s = self.side * self.side;
        &self.values[band * s..(band + 1) * s]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.bands, self.side, self.side]
    }

    /// Re-orders a connectivity tensor, conjugating every band plane.
    pub fn reordered(&self, ord: &ElectrodeOrdering) -> Result<FeatureTensor, LayoutError> {
        if !matches!(self.kind, TensorKind::Connectivity(_)) {
            return Err(LayoutError::BadStack("topographies are not reorderable".into()));
        }
        if ord.len() != self.side {
            return Err(LayoutError::SizeMismatch { expected: self.side, got: ord.len() });
        }
        let mut values = Vec::with_capacity(self.values.len());
        for b in 0..self.bands {
            values.extend(permute_square(self.plane(b), self.side, ord));
        }
        let ordering = Some(match &self.ordering {
            Some(prev) => prev.then(ord),
            None => ord.clone(),
        });
        Ok(FeatureTensor { values, ordering, ..self.clone() })
    }
}

/// Stacks labelled planes into canonical band order. Planes may arrive in
/// any order; their labels must match `band_order` one-to-one.
pub fn stack_bands(
    planes: Vec<(BandDefinition, Vec<f64>)>,
    band_order: &[BandDefinition],
    side: usize,
    kind: TensorKind,
    ordering: Option<ElectrodeOrdering>,
) -> Result<FeatureTensor, LayoutError> {
    if planes.len() != band_order.len() {
        return Err(LayoutError::BadStack(format!(
            "{} planes for {} bands",
            planes.len(),
            band_order.len()
        )));
    }
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; band_order.len()];
    for (band, plane) in planes {
        if plane.len() != side * side {
            return Err(LayoutError::BadStack(format!(
                "plane {} has {} values, expected {}",
                band.name,
                plane.len(),
                side * side
            )));
        }
        let k = band_order
            .iter()
            .position(|b| b.name == band.name)
            .ok_or_else(|| LayoutError::BadStack(format!("unexpected band {}", band.name)))?;
        if slots[k].replace(plane).is_some() {
            return Err(LayoutError::BadStack(format!("band {} given twice", band.name)));
        }
    }
    let mut values = Vec::with_capacity(band_order.len() * side * side);
    for plane in slots.into_iter().flatten() {
        if let Some(i) = plane.iter().position(|v| !v.is_finite()) {
            return Err(LayoutError::NonFinite(i));
        }
        values.extend(plane.iter().map(|&v| v as f32));
    }
    Ok(FeatureTensor { bands: band_order.len(), side, values, kind, ordering })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(rows: &[(&str, f64, f64, f64, Hemisphere)]) -> ElectrodeMontage {
        ElectrodeMontage::new(
            rows.iter().map(|&(l, x, y, z, h)| (l.to_string(), [x, y, z], h)).collect(),
        )
        .unwrap()
    }

    fn labels_in_order(m: &ElectrodeMontage, ord: &ElectrodeOrdering) -> Vec<String> {
        ord.perm().iter().map(|&i| m.electrodes()[i].label.clone()).collect()
    }

    fn random_matrix(n: usize, seed: u64, symmetric: bool) -> ConnectivityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if symmetric {
            for i in 0..n {
                for j in 0..i {
                    values[i * n + j] = values[j * n + i];
                }
            }
        }
        ConnectivityMatrix {
            n,
            values,
            kind: ConnectivityKind::Pcc,
            band: BandDefinition::standard("alpha").unwrap(),
        }
    }

    #[test]
    fn bundled_montage() {
        let m = ElectrodeMontage::deap32();
        assert_eq!(m.len(), 32);
        for e in m.electrodes() {
            let n = e.pos3d.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            assert!(e.pos2d[0].hypot(e.pos2d[1]) < 1.0);
        }
        let mids: Vec<String> = m
            .electrodes()
            .iter()
            .filter(|e| e.hemisphere == Hemisphere::Midline)
            .map(|e| e.label.clone())
            .collect();
        assert_eq!(mids, ["Oz", "Pz", "Fz", "Cz"]);
        let round = ElectrodeMontage::parse(&m.to_text()).unwrap();
        assert_eq!(round.labels(), m.labels());
    }

    #[test]
    fn montage_rejects_bad_input() {
        assert!(matches!(
            ElectrodeMontage::parse("A 1 0 0 left\n"),
            Err(LayoutError::InvalidMontage(_))
        ));
        assert!(matches!(ElectrodeMontage::parse("A 1 0\n"), Err(LayoutError::Parse { line: 1, .. })));
        assert!(ElectrodeMontage::parse("A -1 0 0 left\nA -1 1 0 left\n").is_err());
        assert!(ElectrodeMontage::parse("# only\n\n").is_err());
        assert!(ElectrodeMontage::parse("A -1 0 0 sideways\n").is_err());
    }

    #[test]
    fn distance_ordering_toy() {
        use Hemisphere::*;
        let m = toy(&[
            ("RB", 0.5, -0.5, 0.7, Right),
            ("LF", -0.5, 0.5, 0.7, Left),
            ("RF", 0.5, 0.5, 0.7, Right),
            ("LB", -0.5, -0.5, 0.7, Left),
        ]);
        let ord = distance_ordering(&m).unwrap();
        assert_eq!(labels_in_order(&m, &ord), ["LF", "LB", "RB", "RF"]);
    }

    #[test]
    fn distance_ordering_tie_break() {
        use Hemisphere::*;
        // mirror images through a plane containing the start: equidistant
        let m = toy(&[
            ("Ls", -0.6, 0.8, 0.0, Left),
            ("Lb", -0.8, 0.0, 0.6, Left),
            ("La", -0.8, 0.0, -0.6, Left),
        ]);
        let es = m.electrodes();
        let d1 = dist3(&es[0].pos3d, &es[1].pos3d);
        let d2 = dist3(&es[0].pos3d, &es[2].pos3d);
        assert!(nearly(d1, d2));
        let ord = distance_ordering(&m).unwrap();
        assert_eq!(labels_in_order(&m, &ord), ["Ls", "La", "Lb"]);
    }

    #[test]
    fn distance_ordering_deap() {
        let m = ElectrodeMontage::deap32();
        let ord = distance_ordering(&m).unwrap();
        let mut seen = ord.perm().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..32).collect::<Vec<_>>());
        let labels = labels_in_order(&m, &ord);
        assert_eq!(labels[0], "Fp1");
        assert_eq!(&labels[28..], ["Fz", "Cz", "Pz", "Oz"]);
        // right hemisphere starts at the back
        assert!(labels[14] == "O2", "{labels:?}");
        assert!(labels[..14].iter().all(|l| m.electrodes()[m.index_of(l).unwrap()].hemisphere == Hemisphere::Left));
    }

    #[test]
    fn distance_ordering_ignores_storage_order() {
        let m = ElectrodeMontage::deap32();
        let reference = labels_in_order(&m, &distance_ordering(&m).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut rows: Vec<_> = m
                .electrodes()
                .iter()
                .map(|e| (e.label.clone(), e.pos3d, e.hemisphere))
                .collect();
            rows.shuffle(&mut rng);
            let shuffled = ElectrodeMontage::new(rows).unwrap();
            assert_eq!(labels_in_order(&shuffled, &distance_ordering(&shuffled).unwrap()), reference);
        }
    }

    #[test]
    fn no_left_hemisphere() {
        let m = toy(&[("R", 0.5, 0.0, 0.8, Hemisphere::Right), ("Z", 0.0, 0.0, 1.0, Hemisphere::Midline)]);
        assert!(matches!(distance_ordering(&m), Err(LayoutError::NoLeftHemisphere)));
    }

    #[test]
    fn random_ordering_basics() {
        assert_eq!(random_ordering(32, 9), random_ordering(32, 9));
        assert_ne!(random_ordering(32, 9).perm(), random_ordering(32, 10).perm());
        assert_eq!(random_ordering(1, 4).perm(), &[0]);
    }

    #[test]
    fn random_ordering_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut counts = std::collections::HashMap::new();
        for seed in 1..=1000u64 {
            *counts.entry(random_ordering(5, seed).perm().to_vec()).or_insert(0usize) += 1;
        }
        let expected = 1000.0 / 120.0;
        let mut observed: Vec<f64> = counts.values().map(|&c| c as f64).collect();
        assert!(observed.len() <= 120);
        observed.resize(120, 0.0);
        let chi2: f64 = observed.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(119.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn apply_ordering_examples() {
        let m = random_matrix(6, 1, false);
        assert_eq!(apply_ordering(&m, &ElectrodeOrdering::identity(6)).unwrap(), m);
        let ord = random_ordering(6, 2);
        let there = apply_ordering(&m, &ord).unwrap();
        assert_eq!(apply_ordering(&there, &ord.inverse()).unwrap().values, m.values);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(there.get(i, j), m.get(ord.perm()[i], ord.perm()[j]));
            }
        }
        assert!(matches!(
            apply_ordering(&m, &ElectrodeOrdering::identity(5)),
            Err(LayoutError::SizeMismatch { .. })
        ));
        assert!(ElectrodeOrdering::new(vec![0, 0, 1], OrderingMethod::Identity).is_err());
    }

    fn eigenvalues_sym(a: &[f64], n: usize) -> Vec<f64> {
        // cyclic Jacobi
        let mut m = a.to_vec();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (m[k * n + p], m[k * n + q]);
                        m[k * n + p] = c * akp - s * akq;
                        m[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                        m[p * n + k] = c * apk - s * aqk;
                        m[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    proptest! {
        #[test]
        fn ordering_is_a_group_action(seed in 0u64..10_000) {
            let m = random_matrix(7, seed, false);
            let o1 = random_ordering(7, seed + 1);
            let o2 = random_ordering(7, seed + 2);
            let stepwise = apply_ordering(&apply_ordering(&m, &o1).unwrap(), &o2).unwrap();
            let composed = apply_ordering(&m, &o1.then(&o2)).unwrap();
            prop_assert_eq!(stepwise.values, composed.values);
        }

        #[test]
        fn conjugation_preserves_symmetric_spectrum(seed in 0u64..10_000) {
            let m = random_matrix(8, seed, true);
            let out = apply_ordering(&m, &random_ordering(8, seed ^ 0xabc)).unwrap();
            prop_assert!(out.is_symmetric());
            let tr = |x: &ConnectivityMatrix| (0..8).map(|i| x.get(i, i)).collect::<Vec<_>>();
            let mut a = tr(&m);
            let mut b = tr(&out);
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            // the diagonal is permuted, so the trace agrees exactly
            prop_assert_eq!(a, b);
            let ea = eigenvalues_sym(&m.values, 8);
            let eb = eigenvalues_sym(&out.values, 8);
            for (x, y) in ea.iter().zip(&eb) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn rendering_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let m = ElectrodeMontage::deap32();
            let r = TopographyRenderer::new(&m, 32).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..32).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..32).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mix: Vec<f64> = v.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
            let lhs = r.render(&mix).unwrap();
            let (rv, rw) = (r.render(&v).unwrap(), r.render(&w).unwrap());
            for k in 0..lhs.len() {
                prop_assert!((lhs[k] - (a * rv[k] + b * rw[k])).abs() <= 1e-9);
            }
            let outside: f64 = (0..32 * 32).filter(|&k| !r.is_inside(k / 32, k % 32)).map(|k| lhs[k].abs()).sum();
            prop_assert_eq!(outside, 0.0);
        }
    }

    #[test]
    fn topography_constant_and_zero() {
        let m = ElectrodeMontage::deap32();
        let r = TopographyRenderer::new(&m, 32).unwrap();
        let img = r.render(&[2.5; 32]).unwrap();
        for row in 0..32 {
            for col in 0..32 {
                let v = img[row * 32 + col];
                if r.is_inside(row, col) {
                    assert!((v - 2.5).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(r.render(&[0.0; 32]).unwrap().iter().all(|&v| v == 0.0));
        // disk of radius 1 on a 32 grid: corners are outside
        assert!(!r.is_inside(0, 0) && r.is_inside(16, 16));
    }

    #[test]
    fn topography_nodes_are_exact() {
        let m = ElectrodeMontage::deap32();
        let r = TopographyRenderer::new(&m, 32).unwrap();
        let values: Vec<f64> = (0..32).map(|i| i as f64 * 1.5 - 7.0).collect();
        let img = r.render(&values).unwrap();
        let mut nodes = 0;
        for row in 0..32 {
            for col in 0..32 {
                if let Some(i) = r.node_at(row, col) {
                    assert_eq!(img[row * 32 + col], values[i]);
                    nodes += 1;
                }
            }
        }
        assert_eq!(nodes, 32);
        for (i, e) in m.electrodes().iter().enumerate() {
            assert_eq!(interpolate_at(&m, &values, e.pos2d), values[i]);
        }
    }

    #[test]
    fn single_source_decays_along_rays() {
        // monotone within half the distance to the nearest other electrode
        let m = ElectrodeMontage::deap32();
        let es = m.electrodes();
        for k in [0usize, 6, 14, 23] {
            let mut values = vec![0.0; 32];
            values[k] = 1.0;
            let src = es[k].pos2d;
            let reach = es
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, e)| (e.pos2d[0] - src[0]).hypot(e.pos2d[1] - src[1]))
                .fold(f64::INFINITY, f64::min)
                / 2.0;
            for ray in 0..16 {
                let ang = ray as f64 * std::f64::consts::PI / 8.0;
                let mut prev = 1.0;
                for step in 1..=40 {
                    let t = reach * step as f64 / 40.0;
                    let p = [src[0] + t * ang.cos(), src[1] + t * ang.sin()];
                    if p[0].hypot(p[1]) > 1.0 {
                        break;
                    }
                    let v = interpolate_at(&m, &values, p);
                    assert!(v < prev, "electrode {k}, ray {ray}, step {step}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn topography_errors() {
        use Hemisphere::*;
        let m = ElectrodeMontage::deap32();
        assert!(matches!(render_topography(&[0.0; 31], &m, 32), Err(LayoutError::SizeMismatch { .. })));
        let mut bad = vec![0.0; 32];
        bad[3] = f64::NAN;
        assert!(matches!(render_topography(&bad, &m, 32), Err(LayoutError::NonFinite(3))));
        // same direction, different radius: identical unit-sphere position
        let dup = toy(&[("A", -0.5, 0.5, 0.7, Left), ("B", -1.0, 1.0, 1.4, Left)]);
        assert!(matches!(TopographyRenderer::new(&dup, 8), Err(LayoutError::DuplicatePosition(..))));
    }

    fn bands() -> Vec<BandDefinition> {
        BandDefinition::standard_bands()
    }

    #[test]
    fn stack_bands_orders_planes() {
        let planes: Vec<_> = bands().into_iter().enumerate().map(|(k, b)| (b, vec![k as f64; 1024])).collect();
        let t = stack_bands(planes.clone(), &bands(), 32, TensorKind::Topography, None).unwrap();
        assert_eq!(t.dims(), [10, 32, 32]);
        for k in 0..10 {
            assert!(t.plane(k).iter().all(|&v| v == k as f32));
        }
        let mut shuffled = planes.clone();
        shuffled.reverse();
        shuffled.swap(2, 7);
        assert_eq!(stack_bands(shuffled, &bands(), 32, TensorKind::Topography, None).unwrap(), t);

        assert!(stack_bands(planes[..9].to_vec(), &bands(), 32, TensorKind::Topography, None).is_err());
        let mut small = planes.clone();
        small[0].1.pop();
        assert!(stack_bands(small, &bands(), 32, TensorKind::Topography, None).is_err());
        let mut twice = planes;
        twice[1].0 = twice[0].0.clone();
        assert!(stack_bands(twice, &bands(), 32, TensorKind::Topography, None).is_err());
    }

    #[test]
    fn reordered_tensor_conjugates_each_plane() {
        let planes: Vec<_> = bands()
            .into_iter()
            .enumerate()
            .map(|(k, b)| (b, random_matrix(32, k as u64, true).values))
            .collect();
        let kind = TensorKind::Connectivity(ConnectivityKind::Pcc);
        let t = stack_bands(planes.clone(), &bands(), 32, kind, None).unwrap();
        let ord = random_ordering(32, 5);
        let r = t.reordered(&ord).unwrap();
        for (k, (band, plane)) in planes.into_iter().enumerate() {
            let m = ConnectivityMatrix { n: 32, values: plane, kind: ConnectivityKind::Pcc, band };
            let expect: Vec<f32> = apply_ordering(&m, &ord).unwrap().values.iter().map(|&v| v as f32).collect();
            assert_eq!(r.plane(k), expect.as_slice());
        }
        let back = r.reordered(&ord.inverse()).unwrap();
        assert_eq!(back.values, t.values);
    }
}
